#include "insegan/training.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace insegan {

namespace {

using nlohmann::json;

double grad_norm(const Module& module) {
  double sum = 0;
  for (const auto& p : module.parameters()) {
    if (p.var.has_grad()) sum += p.var.grad().array().cast<double>().square().sum();
  }
  return std::sqrt(sum);
}

[[noreturn]] void diverge(const char* substep, const StepLosses& l, const TrainState& s) {
  std::ostringstream msg;
  msg << "non-finite value in " << substep << " update: L_D=" << l.discriminator << " L_G=" << l.generator
      << " L_E^a=" << l.align << " L_E^i=" << l.intermediate << " L_E^p=" << l.pose
      << " |grad G|=" << grad_norm(s.generator) << " |grad D|=" << grad_norm(s.discriminator)
      << " |grad E|=" << grad_norm(s.encoder);
  throw DivergenceError(msg.str());
}

Tensorf sample_latents(std::mt19937_64& rng, Index rows, Index dim) {
  std::normal_distribution<float> normal;
  Tensorf z({rows, dim});
  for (Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
  return z;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::mt19937_64 mixer(seq);
  return mixer();
}

json net_to_json(const NetConfig& c) {
  return {{"latent_dim", c.latent_dim},
          {"instances", c.instances},
          {"template_channels", c.template_channels},
          {"template_hidden", c.template_hidden},
          {"template_out", c.template_out},
          {"feature_channels", c.feature_channels},
          {"projector_hidden", c.projector_hidden},
          {"renderer_hidden0", c.renderer_hidden0},
          {"renderer_hidden1", c.renderer_hidden1},
          {"critic_base", c.critic_base},
          {"pose_hidden0", c.pose_hidden0},
          {"pose_hidden1", c.pose_hidden1},
          {"pose_init", to_string(c.pose_init)}};
}

NetConfig net_from_json(const json& j) {
  NetConfig c;
  c.latent_dim = j.at("latent_dim");
  c.instances = j.at("instances");
  c.template_channels = j.at("template_channels");
  c.template_hidden = j.at("template_hidden");
  c.template_out = j.at("template_out");
  c.feature_channels = j.at("feature_channels");
  c.projector_hidden = j.at("projector_hidden");
  c.renderer_hidden0 = j.at("renderer_hidden0");
  c.renderer_hidden1 = j.at("renderer_hidden1");
  c.critic_base = j.at("critic_base");
  c.pose_hidden0 = j.at("pose_hidden0");
  c.pose_hidden1 = j.at("pose_hidden1");
  c.pose_init = parse_pose_init(j.value("pose_init", "fixed"));
  return c;
}

// Binary helpers; every multi-byte value is little-endian.
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_i64(std::ostream& out, std::int64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
std::int64_t read_i64(std::istream& in) {
  std::int64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

struct Blob {
  std::string name;
  const Tensorf* tensor;
};

std::vector<Blob> collect_blobs(const TrainState& s) {
  std::vector<Blob> blobs;
  const auto add_module = [&](const std::string& prefix, const Module& m) {
    for (const auto& p : m.parameters()) blobs.push_back({prefix + "/" + p.name, &p.var.value()});
  };
  const auto add_adam = [&](const std::string& prefix, const Adam& a) {
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
      blobs.push_back({"adam/" + prefix + "/m/" + a.parameters()[i].name, &a.first_moments()[i]});
      blobs.push_back({"adam/" + prefix + "/v/" + a.parameters()[i].name, &a.second_moments()[i]});
    }
  };
  add_module("generator", s.generator);
  add_module("discriminator", s.discriminator);
  add_module("encoder", s.encoder);
  add_adam("generator", s.opt_generator);
  add_adam("discriminator", s.opt_discriminator);
  add_adam("encoder", s.opt_encoder);
  return blobs;
}

std::vector<std::pair<std::string, Tensorf*>> mutable_blobs(TrainState& s) {
  std::vector<std::pair<std::string, Tensorf*>> out;
  const auto add_module = [&](const std::string& prefix, const Module& m) {
    for (const auto& p : m.parameters()) {
      ad::Var v = p.var;
      out.emplace_back(prefix + "/" + p.name, &v.mutable_value());
    }
  };
  const auto add_adam = [&](const std::string& prefix, Adam& a) {
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
      out.emplace_back("adam/" + prefix + "/m/" + a.parameters()[i].name, &a.first_moments()[i]);
      out.emplace_back("adam/" + prefix + "/v/" + a.parameters()[i].name, &a.second_moments()[i]);
    }
  };
  add_module("generator", s.generator);
  add_module("discriminator", s.discriminator);
  add_module("encoder", s.encoder);
  add_adam("generator", s.opt_generator);
  add_adam("discriminator", s.opt_discriminator);
  add_adam("encoder", s.opt_encoder);
  return out;
}

constexpr char kMagic[8] = {'I', 'N', 'S', 'G', 'C', 'K', 'P', 'T'};

json read_manifest(std::istream& in, const std::filesystem::path& path) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw std::runtime_error("not an insegan checkpoint: " + path.string());
  }
  const std::uint32_t length = read_u32(in);
  std::string text(length, '\0');
  in.read(text.data(), length);
  if (!in) throw std::runtime_error("truncated checkpoint manifest: " + path.string());
  json manifest = json::parse(text);
  if (manifest.value("format", "") != kCheckpointFormat) {
    throw std::runtime_error("unsupported checkpoint format in " + path.string());
  }
  return manifest;
}

}  // namespace

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(const Module& module, AdamConfig config) : config_(config), params_(module.parameters()) {
  for (const auto& p : params_) {
    m_.push_back(Tensorf::zeros(p.var.shape()));
    v_.push_back(Tensorf::zeros(p.var.shape()));
  }
}

void Adam::step() {
  const std::int64_t t = steps_ + 1;
  const float bias1 = 1.0f - std::pow(config_.beta1, static_cast<float>(t));
  const float bias2 = 1.0f - std::pow(config_.beta2, static_cast<float>(t));
  std::vector<Tensorf> m(m_.size()), v(v_.size()), values(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].var.has_grad()) continue;
    const Tensorf g = params_[i].var.grad();
    m[i] = m_[i];
    v[i] = v_[i];
    m[i].array() = config_.beta1 * m[i].array() + (1.0f - config_.beta1) * g.array();
    v[i].array() = config_.beta2 * v[i].array() + (1.0f - config_.beta2) * g.array().square();
    values[i] = params_[i].var.value();
    values[i].array() -= config_.lr * (m[i].array() / bias1) / ((v[i].array() / bias2).sqrt() + config_.eps);
    if (!values[i].all_finite()) {
      throw DivergenceError("Adam update for '" + params_[i].name + "' is non-finite");
    }
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (values[i].empty()) continue;
    m_[i] = std::move(m[i]);
    v_[i] = std::move(v[i]);
    ad::Var handle = params_[i].var;
    handle.mutable_value() = std::move(values[i]);
  }
  steps_ = t;
}

void Adam::reset() {
  for (auto& m : m_) m.set_zero();
  for (auto& v : v_) v.set_zero();
  steps_ = 0;
}

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  net.validate();
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
  if (!(adam.lr > 0) || !(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1) ||
      !(adam.eps > 0)) {
    throw std::invalid_argument("TrainConfig: invalid Adam hyperparameters");
  }
  if (!(ipot.beta > 0) || ipot.iterations < 1 || ipot.inner < 1) {
    throw std::invalid_argument("TrainConfig: invalid IPOT settings");
  }
  if (!encoder.use_alignment && !encoder.use_intermediate && !encoder.use_pose) {
    throw std::invalid_argument("TrainConfig: every encoder loss term is disabled");
  }
  if (checkpoint_every < 0 || validate_every < 0 || max_resets < 0) {
    throw std::invalid_argument("TrainConfig: cadences must be non-negative");
  }
}

bool TrainConfig::operator==(const TrainConfig& o) const { return to_json() == o.to_json(); }

json TrainConfig::to_json() const {
  return {{"net", net_to_json(net)},
          {"variant", to_string(variant)},
          {"aligner", to_string(aligner)},
          {"ipot", {{"beta", ipot.beta}, {"iterations", ipot.iterations}, {"inner", ipot.inner}}},
          {"encoder_loss",
           {{"alignment", encoder.use_alignment},
            {"intermediate", encoder.use_intermediate},
            {"pose", encoder.use_pose},
            {"lambda_intermediate", encoder.lambda_intermediate},
            {"lambda_pose", encoder.lambda_pose},
            {"pose_norm", pose_norm == PoseNorm::kL1 ? "l1" : "l2"}}},
          {"adam", {{"lr", adam.lr}, {"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"seed", seed},
          {"augment", augment},
          {"checkpoint_every", checkpoint_every},
          {"validate_every", validate_every},
          {"auto_reset", auto_reset},
          {"max_resets", max_resets}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.net = net_from_json(j.at("net"));
  c.variant = parse_generator_variant(j.at("variant").get<std::string>());
  c.aligner = parse_aligner(j.at("aligner").get<std::string>());
  const json& ipot = j.at("ipot");
  c.ipot = {ipot.at("beta"), ipot.at("iterations"), ipot.at("inner")};
  const json& e = j.at("encoder_loss");
  c.encoder.use_alignment = e.at("alignment");
  c.encoder.use_intermediate = e.at("intermediate");
  c.encoder.use_pose = e.at("pose");
  c.encoder.lambda_intermediate = e.at("lambda_intermediate");
  c.encoder.lambda_pose = e.at("lambda_pose");
  const std::string norm = e.value("pose_norm", "l1");
  if (norm != "l1" && norm != "l2") throw std::invalid_argument("unknown pose_norm: " + norm);
  c.pose_norm = norm == "l1" ? PoseNorm::kL1 : PoseNorm::kL2;
  const json& a = j.at("adam");
  c.adam = {a.at("lr"), a.at("beta1"), a.at("beta2"), a.at("eps")};
  c.batch_size = j.at("batch_size");
  c.epochs = j.at("epochs");
  c.seed = j.at("seed");
  c.augment = j.at("augment");
  c.checkpoint_every = j.at("checkpoint_every");
  c.validate_every = j.at("validate_every");
  c.auto_reset = j.at("auto_reset");
  c.max_resets = j.at("max_resets");
  c.validate();
  return c;
}

TrainState::TrainState(const TrainConfig& cfg)
    : config((cfg.validate(), cfg)),
      generator(cfg.net, cfg.variant, derive_seed(cfg.seed, 1)),
      discriminator(cfg.net, derive_seed(cfg.seed, 2)),
      encoder(cfg.net, derive_seed(cfg.seed, 3)),
      opt_generator(generator, cfg.adam),
      opt_discriminator(discriminator, cfg.adam),
      opt_encoder(encoder, cfg.adam),
      rng(derive_seed(cfg.seed, 4)) {}

void TrainState::reset_optimizers() {
  opt_generator.reset();
  opt_discriminator.reset();
  opt_encoder.reset();
}

bool StepLosses::all_finite() const {
  return std::isfinite(discriminator) && std::isfinite(generator) && std::isfinite(align) &&
         std::isfinite(intermediate) && std::isfinite(pose) && std::isfinite(encoder);
}

// ---------------------------------------------------------------------------
// One training step

StepLosses train_step(const Tensorf& batch, TrainState& s, const StepProbe* probe) {
  const TrainConfig& cfg = s.config;
  if (batch.rank() != 4 || batch.dim(1) != 1 || batch.dim(2) != kImageSize || batch.dim(3) != kImageSize ||
      batch.dim(0) < 1) {
    throw std::invalid_argument("train_step: expected a B×1×64×64 batch, got " + shape_string(batch.shape()));
  }
  const Index b = batch.dim(0), n = cfg.instances();
  StepLosses losses;

  const Tensorf z = sample_latents(s.rng, b * n, cfg.net.latent_dim);
  const ad::Var real = ad::constant(batch);

  // Discriminator: real batch against detached fakes.
  s.generator.zero_grad();
  s.discriminator.zero_grad();
  s.encoder.zero_grad();
  s.generator.set_requires_grad(true);
  const Generator::Output fake = s.generator.generate(ad::constant(z), n);
  {
    const auto adv = adversarial_losses(s.discriminator.discriminate(real),
                                        s.discriminator.discriminate(ad::detach(fake.image)));
    losses.discriminator = ad::item(adv.discriminator);
    if (!std::isfinite(losses.discriminator)) diverge("discriminator", losses, s);
    ad::backward(adv.discriminator);
    s.opt_discriminator.step();
    s.discriminator.zero_grad();
  }

  // Generator, against the freshly updated discriminator.
  {
    s.discriminator.set_requires_grad(false);
    const ad::Var scores = s.discriminator.discriminate(fake.image);
    const ad::Var loss = ad::scale(ad::mean_log(scores, kScoreEpsilon, false), -1.0f);
    losses.generator = ad::item(loss);
    s.discriminator.set_requires_grad(true);
    if (!std::isfinite(losses.generator)) diverge("generator", losses, s);
    ad::backward(loss);
    s.opt_generator.step();
    s.generator.zero_grad();
  }

  // Encoder, with every generator parameter frozen.
  s.generator.set_requires_grad(false);
  s.discriminator.set_requires_grad(false);
  {
    const Generator::Output target = s.generator.generate(ad::constant(z), n);
    const ad::Var generated = ad::constant(target.image.value());
    const Encoder::Output enc = s.encoder.encode(generated);
    const EncoderLossWeights& w = cfg.encoder;

    ad::Var align, inter, pose;
    if (w.use_alignment) {
      align = alignment_loss(z, enc.latents, n, cfg.aligner, cfg.ipot);
      losses.align = ad::item(align);
    }
    if (w.use_intermediate) {
      inter = intermediate_loss(ad::constant(target.pooled.value()), enc.derendered);
      losses.intermediate = ad::item(inter);
    }
    if (w.use_pose) {
      pose = pose_loss(generated, s.generator.generate(enc.latents, n).image, cfg.pose_norm);
      losses.pose = ad::item(pose);
    }
    const ad::Var total = encoder_loss(align, inter, pose, w);
    losses.encoder = ad::item(total);
    if (!losses.all_finite()) {
      s.generator.set_requires_grad(true);
      s.discriminator.set_requires_grad(true);
      diverge("encoder", losses, s);
    }
    ad::backward(total);
    if (probe && probe->before_encoder_update) probe->before_encoder_update(s);
    s.opt_encoder.step();
    if (probe && probe->after_encoder_update) probe->after_encoder_update(s);
    s.encoder.zero_grad();
  }
  s.generator.set_requires_grad(true);
  s.discriminator.set_requires_grad(true);
  ++s.step;
  return losses;
}

// ---------------------------------------------------------------------------
// Augmentation and batching

Tensorf flip_horizontal(const Tensorf& image) {
  const Index w = image.dim(image.rank() - 1);
  const Index rows = image.size() / w;
  Tensorf out(image.shape());
  out.matrix(rows, w) = image.matrix(rows, w).rowwise().reverse();
  return out;
}

Tensorf flip_vertical(const Tensorf& image) {
  const Index w = image.dim(image.rank() - 1), h = image.dim(image.rank() - 2);
  const Index planes = image.size() / (h * w);
  Tensorf out(image.shape());
  for (Index p = 0; p < planes; ++p) {
    for (Index r = 0; r < h; ++r) {
      out.array().segment((p * h + r) * w, w) = image.array().segment((p * h + (h - 1 - r)) * w, w);
    }
  }
  return out;
}

Tensorf augment(const Tensorf& image, std::mt19937_64& rng) {
  if (image.rank() < 2) throw std::invalid_argument("augment: expected an image");
  const std::uint64_t bits = rng();
  Tensorf out = image;
  if (bits & 1u) out = flip_horizontal(out);
  if (bits & 2u) out = flip_vertical(out);
  return out;
}

Tensorf gather_batch(const Tensorf& images, const std::vector<Index>& index) {
  if (images.rank() != 4) throw std::invalid_argument("gather_batch: expected N×C×H×W images");
  const Index per = images.size() / images.dim(0);
  Tensorf out({static_cast<Index>(index.size()), images.dim(1), images.dim(2), images.dim(3)});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= images.dim(0)) throw std::out_of_range("gather_batch: index out of range");
    out.array().segment(static_cast<Index>(i) * per, per) = images.array().segment(index[i] * per, per);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const TrainState& s, const std::filesystem::path& path) {
  const auto blobs = collect_blobs(s);
  std::ostringstream rng_text;
  rng_text << s.rng;
  json tensors = json::array();
  for (const auto& b : blobs) tensors.push_back({{"name", b.name}, {"shape", b.tensor->shape()}});
  const json manifest = {{"format", kCheckpointFormat},
                         {"config", s.config.to_json()},
                         {"epoch", s.epoch},
                         {"step", s.step},
                         {"rng", rng_text.str()},
                         {"adam_steps",
                          {{"generator", s.opt_generator.steps()},
                           {"discriminator", s.opt_discriminator.steps()},
                           {"encoder", s.opt_encoder.steps()}}},
                         {"tensors", tensors}};
  const std::string text = manifest.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    write_u32(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& b : blobs) {
      write_u32(out, static_cast<std::uint32_t>(b.name.size()));
      out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
      write_u32(out, static_cast<std::uint32_t>(b.tensor->rank()));
      for (const Index d : b.tensor->shape()) write_i64(out, d);
      out.write(reinterpret_cast<const char*>(b.tensor->data()),
                static_cast<std::streamsize>(b.tensor->size() * sizeof(float)));
    }
    out.flush();
    if (!out) throw std::runtime_error("failed writing checkpoint: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

json read_checkpoint_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  return read_manifest(in, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  const json manifest = read_manifest(in, path);
  TrainState s(TrainConfig::from_json(manifest.at("config")));
  s.epoch = manifest.at("epoch");
  s.step = manifest.at("step");
  std::istringstream rng_text(manifest.at("rng").get<std::string>());
  rng_text >> s.rng;
  if (!rng_text) throw std::runtime_error("corrupt RNG state in checkpoint: " + path.string());
  s.opt_generator.set_steps(manifest.at("adam_steps").at("generator"));
  s.opt_discriminator.set_steps(manifest.at("adam_steps").at("discriminator"));
  s.opt_encoder.set_steps(manifest.at("adam_steps").at("encoder"));

  auto targets = mutable_blobs(s);
  if (targets.size() != manifest.at("tensors").size()) {
    throw std::runtime_error("checkpoint tensor count does not match its config: " + path.string());
  }
  for (auto& [name, tensor] : targets) {
    const std::uint32_t name_length = read_u32(in);
    std::string stored(name_length, '\0');
    in.read(stored.data(), name_length);
    const std::uint32_t rank = read_u32(in);
    Shape shape(rank);
    for (auto& d : shape) d = read_i64(in);
    if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
    if (stored != name) throw std::runtime_error("checkpoint tensor '" + stored + "' found where '" + name + "' expected");
    if (shape != tensor->shape()) {
      throw std::runtime_error("checkpoint tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                               shape_string(tensor->shape()));
    }
    in.read(reinterpret_cast<char*>(tensor->data()), static_cast<std::streamsize>(tensor->size() * sizeof(float)));
    if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Training loop

FitResult fit(const Tensorf& images, TrainState& state, const FitOptions& options) {
  if (images.rank() != 4 || images.dim(0) < 1) throw std::invalid_argument("fit: expected N×1×64×64 images");
  const TrainConfig& cfg = state.config;
  std::filesystem::create_directories(options.output_dir);
  const auto metrics_path = options.output_dir / "metrics.csv";
  const auto validation_path = options.output_dir / "validation.csv";
  const bool fresh = state.epoch == 0;
  std::ofstream metrics(metrics_path, fresh ? std::ios::trunc : std::ios::app);
  if (!metrics) throw std::runtime_error("cannot write " + metrics_path.string());
  if (fresh) metrics << kMetricsHeader << '\n';
  std::ofstream validation;
  if (options.validate && cfg.validate_every > 0) {
    validation.open(validation_path, fresh ? std::ios::trunc : std::ios::app);
    if (fresh) validation << "epoch,miou\n";
  }

  FitResult result;
  const auto checkpoint = [&](const std::string& name) {
    const auto path = options.output_dir / name;
    save_checkpoint(state, path);
    result.checkpoints.push_back(path);
  };

  const Index count = images.dim(0);
  const auto start = std::chrono::steady_clock::now();
  while (state.epoch < cfg.epochs) {
    std::vector<Index> order(static_cast<std::size_t>(count));
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), state.rng);

    StepLosses sum;
    int steps = 0;
    for (Index first = 0; first < count; first += cfg.batch_size) {
      const Index last = std::min(count, first + cfg.batch_size);
      Tensorf batch = gather_batch(images, std::vector<Index>(order.begin() + first, order.begin() + last));
      if (cfg.augment) {
        const Index per = batch.size() / batch.dim(0);
        for (Index i = 0; i < batch.dim(0); ++i) {
          Tensorf one({1, kImageSize, kImageSize}, batch.array().segment(i * per, per));
          batch.array().segment(i * per, per) = augment(one, state.rng).array();
        }
      }
      StepLosses l;
      try {
        l = train_step(batch, state);
      } catch (const DivergenceError& e) {
        if (cfg.auto_reset && result.resets < cfg.max_resets) {
          ++result.resets;
          state.reset_optimizers();
          continue;
        }
        result.diverged = true;
        result.divergence_message = e.what();
        checkpoint("emergency.ckpt");
        return result;
      }
      sum.discriminator += l.discriminator;
      sum.generator += l.generator;
      sum.align += l.align;
      sum.intermediate += l.intermediate;
      sum.pose += l.pose;
      sum.encoder += l.encoder;
      ++steps;
    }
    ++state.epoch;

    EpochMetrics m;
    m.epoch = state.epoch;
    const float inv = steps > 0 ? 1.0f / static_cast<float>(steps) : 0.0f;
    m.mean = {sum.discriminator * inv, sum.generator * inv, sum.align * inv,
              sum.intermediate * inv, sum.pose * inv, sum.encoder * inv};
    m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    metrics << m.epoch << ',' << m.mean.discriminator << ',' << m.mean.generator << ',' << m.mean.align << ','
            << m.mean.intermediate << ',' << m.mean.pose << ',' << m.wall_time_s << '\n';
    metrics.flush();

    if (options.validate && cfg.validate_every > 0 && state.epoch % cfg.validate_every == 0) {
      m.validation_miou = options.validate(state);
      validation << m.epoch << ',' << *m.validation_miou << '\n';
      validation.flush();
    }
    if (cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "checkpoint_%04d.ckpt", state.epoch);
      checkpoint(name);
    }
    result.history.push_back(m);
    if (options.on_epoch) options.on_epoch(m);
  }
  checkpoint("final.ckpt");
  return result;
}

}  // namespace insegan
