#include "dadee/adaptation.hpp"

#include <cmath>
#include <sstream>

#include "dadee/errors.hpp"
#include "dadee/losses.hpp"
#include "dadee/optim.hpp"
#include "dadee/source_training.hpp"

namespace dadee {

namespace {

template <std::floating_point T>
Tensor<T> uniform_init(Shape shape, std::size_t fan_in, SeededRng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <std::floating_point T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add(matmul(x, w), b);
}

template <std::floating_point T>
void require_width(const char* op, const Discriminator<T>& d, const Tensor<T>& e) {
  if (e.rank() != 2 || e.dim(1) != d.input_width()) {
    throw ShapeError(std::string(op) + ": features " + shape_str(e.shape()) + " do not match discriminator width " +
                     std::to_string(d.input_width()));
  }
}

Tensor<float> frozen_copy(const Tensor<float>& t) { return t.defined() ? t.detach() : Tensor<float>(); }

EncoderBundle frozen_snapshot(const EncoderBundle& b) {
  EncoderBundle c;
  c.config = b.config;
  c.heads = b.heads;
  c.token_embedding = frozen_copy(b.token_embedding);
  c.position_embedding = frozen_copy(b.position_embedding);
  for (const auto& k : b.blocks) {
    c.blocks.push_back(EncoderBlock<float>{
        frozen_copy(k.wq), frozen_copy(k.bq), frozen_copy(k.wk), frozen_copy(k.bk), frozen_copy(k.wv),
        frozen_copy(k.bv), frozen_copy(k.wo), frozen_copy(k.bo), frozen_copy(k.attn_norm_gamma),
        frozen_copy(k.attn_norm_beta), frozen_copy(k.ff_in), frozen_copy(k.ff_in_bias), frozen_copy(k.ff_out),
        frozen_copy(k.ff_out_bias), frozen_copy(k.ff_norm_gamma), frozen_copy(k.ff_norm_beta)});
  }
  c.frozen = true;
  return c;
}

}  // namespace

template <std::floating_point T>
Tensor<T> Discriminator<T>::forward(const Tensor<T>& features) const {
  require_width("discriminator", *this, features);
  const T slope = static_cast<T>(kDiscriminatorSlope);
  Tensor<T> h = leaky_relu(dense(features, w1, b1), slope);
  h = leaky_relu(dense(h, w2, b2), slope);
  return clamp(sigmoid(dense(h, w3, b3)), static_cast<T>(kProbFloor), static_cast<T>(1.0 - kProbFloor));
}

template <std::floating_point T>
std::vector<Tensor<T>> Discriminator<T>::parameters() const {
  return {w1, b1, w2, b2, w3, b3};
}

template <std::floating_point T>
Discriminator<T> Discriminator<T>::detached() const {
  return {w1.detach(), b1.detach(), w2.detach(), b2.detach(), w3.detach(), b3.detach()};
}

template <std::floating_point T>
std::vector<Tensor<T>> DiscriminatorStack<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (const auto& d : layers)
    for (auto& p : d.parameters()) out.push_back(p);
  return out;
}

template <std::floating_point T>
DiscriminatorStack<T> init_discriminators(std::size_t num_layers, std::size_t width, std::size_t hidden,
                                          SeededRng& rng) {
  if (num_layers == 0 || width == 0 || hidden == 0) {
    throw ValidationError("init_discriminators: layers, width and hidden must be positive");
  }
  DiscriminatorStack<T> stack;
  for (std::size_t i = 0; i < num_layers; ++i) {
    Discriminator<T> d;
    d.w1 = uniform_init<T>({width, hidden}, width, rng);
    d.b1 = Tensor<T>::zeros({hidden}, true);
    d.w2 = uniform_init<T>({hidden, hidden}, hidden, rng);
    d.b2 = Tensor<T>::zeros({hidden}, true);
    d.w3 = uniform_init<T>({hidden, 1}, hidden, rng);
    d.b3 = Tensor<T>::zeros({1}, true);
    stack.layers.push_back(std::move(d));
  }
  return stack;
}

template <std::floating_point T>
Tensor<T> disc_loss_layer(const Discriminator<T>& d, const Tensor<T>& e_s, const Tensor<T>& e_t) {
  require_width("disc_loss_layer", d, e_s);
  require_width("disc_loss_layer", d, e_t);
  const Tensor<T> p_s = d.forward(e_s.detach());
  const Tensor<T> p_t = d.forward(e_t.detach());
  const Tensor<T> source_term = mean(log(p_s));
  const Tensor<T> target_term = mean(log(add_scalar(scale(p_t, T(-1)), T(1))));
  return scale(add(source_term, target_term), T(-1));
}

template <std::floating_point T>
Tensor<T> gen_loss_layer(const Discriminator<T>& d, const Tensor<T>& e_t) {
  require_width("gen_loss_layer", d, e_t);
  return scale(mean(log(d.detached().forward(e_t))), T(-1));
}

template <std::floating_point T>
Tensor<T> kd_loss_layer(const ExitHeads<T>& heads, std::size_t layer, const Tensor<T>& e_s, const Tensor<T>& e_t) {
  if (e_s.shape() != e_t.shape()) {
    throw ShapeError("kd_loss_layer: " + shape_str(e_s.shape()) + " vs " + shape_str(e_t.shape()));
  }
  const Tensor<T> p = softmax(apply_head(heads, layer, e_s.detach()));
  const Tensor<T> q = softmax(apply_head(heads, layer, e_t));
  return kl_divergence(p, q);
}

template <std::floating_point T>
PairForward<T> pair_forward(const BasicEncoderBundle<T>& source, const BasicEncoderBundle<T>& target,
                            std::span<const std::vector<TokenId>> x_s, std::span<const std::vector<TokenId>> x_t) {
  if (!(source.config == target.config)) throw ValidationError("pair_forward: source and target configs differ");
  PairForward<T> f;
  {
    NoGradGuard<T> no_grad;
    f.source_on_source = encode(source, pack_batch(x_s, source.config)).pooled;
  }
  std::vector<std::vector<TokenId>> both(x_s.begin(), x_s.end());
  both.insert(both.end(), x_t.begin(), x_t.end());
  const auto out = encode(target, pack_batch(both, target.config));
  for (const auto& pooled : out.pooled) {
    f.target_on_source.push_back(slice_rows(pooled, 0, x_s.size()));
    f.target_on_target.push_back(slice_rows(pooled, x_s.size(), both.size()));
  }
  return f;
}

template <std::floating_point T>
Tensor<T> discriminator_objective(const DiscriminatorStack<T>& discs, const PairForward<T>& f) {
  const std::size_t layers = f.source_on_source.size();
  if (discs.size() != layers) {
    throw ValidationError("discriminator_objective: " + std::to_string(discs.size()) + " discriminators for " +
                          std::to_string(layers) + " layers");
  }
  std::vector<Tensor<T>> losses;
  for (std::size_t i = 0; i < layers; ++i)
    losses.push_back(disc_loss_layer(discs.layers[i], f.source_on_source[i], f.target_on_target[i]));
  return weighted_aggregate<T>(losses, layers);
}

template <std::floating_point T>
GeneratorObjective<T> generator_objective(const ExitHeads<T>& heads, const DiscriminatorStack<T>& discs,
                                          const PairForward<T>& f, double kd_weight) {
  const std::size_t layers = f.source_on_source.size();
  if (discs.size() != layers || heads.weight.size() != layers) {
    throw ValidationError("generator_objective: layer count mismatch");
  }
  std::vector<Tensor<T>> totals;
  std::vector<double> gens, kds;
  for (std::size_t i = 0; i < layers; ++i) {
    const Tensor<T> gen = gen_loss_layer(discs.layers[i], f.target_on_target[i]);
    const Tensor<T> kd = kd_loss_layer(heads, i, f.source_on_source[i], f.target_on_source[i]);
    gens.push_back(gen.item());
    kds.push_back(kd.item());
    totals.push_back(kd_weight == 0.0 ? gen : add(gen, scale(kd, static_cast<T>(kd_weight))));
  }
  GeneratorObjective<T> out;
  out.total = weighted_aggregate<T>(totals, layers);
  out.gen = weighted_aggregate(gens, layers);
  out.kd = weighted_aggregate(kds, layers);
  return out;
}

void AdaptConfig::validate() const {
  auto fail = [](const std::string& why) { throw ValidationError("adapt config: " + why); };
  if (epochs < 1) fail("epochs must be at least 1");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (!(lr_generator > 0.0)) fail("lr_generator must be positive");
  if (!(lr_discriminator > 0.0)) fail("lr_discriminator must be positive");
  if (disc_steps < 1) fail("disc_steps must be at least 1");
  if (!(kd_weight >= 0.0) || !std::isfinite(kd_weight)) fail("kd_weight must be finite and non-negative");
  if (disc_hidden < 1) fail("disc_hidden must be positive");
}

std::string AdaptHistory::to_csv() const {
  std::ostringstream out;
  out.precision(9);
  out << "step,disc_loss,gen_loss,kd_loss\n";
  for (std::size_t i = 0; i < steps.size(); ++i)
    out << i + 1 << ',' << steps[i].disc_loss << ',' << steps[i].gen_loss << ',' << steps[i].kd_loss << '\n';
  return out.str();
}

AdaptResult adapt(const EncoderBundle& source, EncoderBundle target, DiscriminatorStack<float> discriminators,
                  const Corpus& source_train, const UnlabeledCorpus& target_train, const AdaptConfig& config,
                  SeededRng& rng, const AdaptProbe& probe) {
  config.validate();
  if (!source.frozen) throw ValidationError("adapt: source encoder is not frozen");
  if (target.frozen) throw ValidationError("adapt: target encoder is frozen");
  if (target.heads != source.heads) throw ValidationError("adapt: target must share the source exit heads");
  if (!(target.config == source.config)) throw ValidationError("adapt: source and target configs differ");
  const std::size_t layers = source.config.num_layers;
  if (discriminators.size() != layers) {
    throw ValidationError("adapt: " + std::to_string(discriminators.size()) + " discriminators for " +
                          std::to_string(layers) + " layers");
  }
  for (const auto& d : discriminators.layers)
    if (d.input_width() != source.config.d_model) throw ShapeError("adapt: discriminator width != d_model");

  auto encoder_params = target.encoder_parameters();
  Adam<float> gen_opt(encoder_params, AdamConfig{config.lr_generator});
  Adam<float> disc_opt(discriminators.parameters(), AdamConfig{config.lr_discriminator});
  PairedBatcher batcher(source_train, target_train, config.batch_size);
  AdaptHistory history;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& batch : batcher.epoch(rng)) {
      GradTape<float> gen_tape;
      TapeGuard<float> gen_guard(gen_tape);
      const PairForward<float> f = pair_forward(source, target, batch.source.sequences, batch.target);

      AdaptStepRecord record;
      for (std::size_t k = 0; k < config.disc_steps; ++k) {
        GradTape<float> disc_tape;
        TapeGuard<float> disc_guard(disc_tape);
        const Tensor<float> disc_loss = discriminator_objective(discriminators, f);
        if (k == 0) record.disc_loss = disc_loss.item();
        disc_opt.step(backward(disc_tape, disc_loss));
      }

      const GeneratorObjective<float> g = generator_objective(*target.heads, discriminators, f, config.kd_weight);
      record.gen_loss = g.gen;
      record.kd_loss = g.kd;
      gen_opt.step(backward(gen_tape, g.total));
      history.steps.push_back(record);
    }
    AdaptEpochRecord epoch_record;
    if (probe) probe(frozen_snapshot(target), epoch, epoch_record);
    history.epochs.push_back(epoch_record);
  }
  target.freeze();
  return AdaptResult{std::move(target), std::move(discriminators), std::move(history)};
}

#define DADEE_INSTANTIATE_ADAPT(T)                                                                          \
  template struct Discriminator<T>;                                                                         \
  template struct DiscriminatorStack<T>;                                                                    \
  template DiscriminatorStack<T> init_discriminators<T>(std::size_t, std::size_t, std::size_t, SeededRng&); \
  template Tensor<T> disc_loss_layer(const Discriminator<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> gen_loss_layer(const Discriminator<T>&, const Tensor<T>&);                             \
  template Tensor<T> kd_loss_layer(const ExitHeads<T>&, std::size_t, const Tensor<T>&, const Tensor<T>&);   \
  template PairForward<T> pair_forward(const BasicEncoderBundle<T>&, const BasicEncoderBundle<T>&,          \
                                       std::span<const std::vector<TokenId>>,                               \
                                       std::span<const std::vector<TokenId>>);                              \
  template Tensor<T> discriminator_objective(const DiscriminatorStack<T>&, const PairForward<T>&);          \
  template GeneratorObjective<T> generator_objective(const ExitHeads<T>&, const DiscriminatorStack<T>&,     \
                                                     const PairForward<T>&, double);

DADEE_INSTANTIATE_ADAPT(float)
DADEE_INSTANTIATE_ADAPT(double)

#undef DADEE_INSTANTIATE_ADAPT

}  // namespace dadee
