#include "insegan/nets.hpp"

#include <cmath>
#include <stdexcept>

namespace insegan {

namespace {

constexpr float kLeakySlope = 0.2f;
constexpr float kInitStd = 0.02f;

const kernels::ConvSpec k3x3{3, 1, 1};
const kernels::ConvSpec k1x1{1, 1, 0};
const kernels::ConvSpec k4x4s2{4, 2, 1};

ad::Var lrelu(const ad::Var& x) { return ad::leaky_relu(x, kLeakySlope); }

ad::Var norm_act(const ad::Var& x) { return lrelu(ad::instance_norm(x)); }

Tensorf normal_tensor(Shape shape, float stddev, std::mt19937_64& rng) {
  std::normal_distribution<float> normal(0.0f, stddev);
  Tensorf t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = normal(rng);
  return t;
}

void require_images(const ad::Var& x, const char* what) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != kImageSize || s[3] != kImageSize) {
    throw std::invalid_argument(std::string(what) + ": expected B×1×64×64 images, got " + shape_string(s));
  }
}

}  // namespace

NetConfig NetConfig::full(Index instances) {
  NetConfig c;
  c.instances = instances;
  return c;
}

NetConfig NetConfig::desk(Index instances) {
  NetConfig c;
  c.instances = instances;
  c.template_channels = 16;
  c.template_hidden = 8;
  c.template_out = 4;
  c.feature_channels = 32;
  c.projector_hidden = 32;
  c.renderer_hidden0 = 16;
  c.renderer_hidden1 = 8;
  c.critic_base = 16;
  c.pose_hidden0 = 128;
  c.pose_hidden1 = 64;
  return c;
}

void NetConfig::validate() const {
  const Index fields[] = {latent_dim,       instances,        template_channels, template_hidden, template_out,
                          feature_channels, projector_hidden, renderer_hidden0,  renderer_hidden1, critic_base,
                          pose_hidden0,     pose_hidden1};
  for (Index f : fields) {
    if (f < 1) throw std::invalid_argument("NetConfig: every width and count must be positive");
  }
}

PoseInit parse_pose_init(std::string_view name) {
  if (name == "fixed") return PoseInit::kFixed;
  if (name == "fan-in") return PoseInit::kFanIn;
  throw std::invalid_argument("unknown pose init '" + std::string(name) + "' (expected fixed or fan-in)");
}

std::string to_string(PoseInit init) { return init == PoseInit::kFixed ? "fixed" : "fan-in"; }

GeneratorVariant parse_generator_variant(std::string_view name) {
  if (name == "3d") return GeneratorVariant::kTemplate3d;
  if (name == "2d") return GeneratorVariant::kPlain2d;
  throw std::invalid_argument("unknown generator variant '" + std::string(name) + "' (expected 3d or 2d)");
}

std::string to_string(GeneratorVariant variant) {
  return variant == GeneratorVariant::kTemplate3d ? "3d" : "2d";
}

// ---------------------------------------------------------------- Module

const ad::Var* Module::find_parameter(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p.var;
  }
  return nullptr;
}

Index Module::parameter_count() const {
  Index n = 0;
  for (const auto& p : params_) n += p.var.value().size();
  return n;
}

void Module::set_requires_grad(bool on) {
  for (auto& p : params_) p.var.set_requires_grad(on);
}

void Module::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

bool Module::all_finite() const {
  for (const auto& p : params_) {
    if (!p.var.value().all_finite()) return false;
  }
  return true;
}

ad::Var Module::add_parameter(std::string name, Tensorf init) {
  ad::Var v(std::move(init), true);
  params_.push_back({std::move(name), v});
  return v;
}

Linear Module::make_linear(const std::string& name, Index in, Index out, std::mt19937_64& rng, float stddev) {
  return {add_parameter(name + ".weight", normal_tensor({out, in}, stddev, rng)),
          add_parameter(name + ".bias", Tensorf({out}))};
}

Conv Module::make_conv(const std::string& name, Index in, Index out, kernels::ConvSpec spec, bool volumetric,
                       std::mt19937_64& rng) {
  const Index k = spec.kernel;
  Shape shape = volumetric ? Shape{out, in, k, k, k} : Shape{out, in, k, k};
  return {add_parameter(name + ".weight", normal_tensor(std::move(shape), kInitStd, rng)),
          add_parameter(name + ".bias", Tensorf({out})), spec};
}

// ------------------------------------------------------------- Generator

Generator::Generator(const NetConfig& config, GeneratorVariant variant, std::uint64_t seed)
    : config_(config), variant_(variant) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const NetConfig& c = config_;
  if (variant_ == GeneratorVariant::kTemplate3d) {
    const auto pose_std = [&](Index fan_in) {
      return c.pose_init == PoseInit::kFanIn ? std::sqrt(2.0f / static_cast<float>(fan_in)) : kInitStd;
    };
    pose_layers_.push_back(make_linear("pose.fc0", c.latent_dim, c.pose_hidden0, rng, pose_std(c.latent_dim)));
    pose_layers_.push_back(make_linear("pose.fc1", c.pose_hidden0, c.pose_hidden1, rng, pose_std(c.pose_hidden0)));
    pose_layers_.push_back(make_linear("pose.fc2", c.pose_hidden1, 6, rng, pose_std(c.pose_hidden1)));
    template_ = add_parameter("template",
                              normal_tensor({c.template_channels, kTemplateSize, kTemplateSize, kTemplateSize}, 1.0f, rng));
    template_up0_ = {make_conv("template.up0.conv1", c.template_channels, c.template_hidden, k3x3, true, rng),
                     make_conv("template.up0.conv2", c.template_hidden, c.template_hidden, k3x3, true, rng),
                     make_conv("template.up0.skip", c.template_channels, c.template_hidden, k1x1, true, rng)};
    template_up1_ = {make_conv("template.up1.conv1", c.template_hidden, c.template_out, k3x3, true, rng),
                     make_conv("template.up1.conv2", c.template_out, c.template_out, k3x3, true, rng),
                     make_conv("template.up1.skip", c.template_hidden, c.template_out, k1x1, true, rng)};
    project0_ = make_conv("project.conv0", c.template_out * kVolumeSize, c.projector_hidden, k3x3, false, rng);
    project1_ = make_conv("project.conv1", c.projector_hidden, c.feature_channels, k3x3, false, rng);
  } else {
    plain_fc_ = make_linear("plain.fc", c.latent_dim, c.template_channels * kTemplateSize * kTemplateSize, rng);
    plain0_ = make_conv("plain.conv0", c.template_channels, c.template_hidden, k3x3, false, rng);
    plain1_ = make_conv("plain.conv1", c.template_hidden, c.projector_hidden, k3x3, false, rng);
    plain2_ = make_conv("plain.conv2", c.projector_hidden, c.feature_channels, k3x3, false, rng);
  }
  render0_ = make_conv("render.conv0", c.feature_channels, c.renderer_hidden0, k3x3, false, rng);
  render1_ = make_conv("render.conv1", c.renderer_hidden0, c.renderer_hidden1, k3x3, false, rng);
  render_out_ = make_conv("render.out", c.renderer_hidden1, 1, k3x3, false, rng);
}

void Generator::require_latents(const ad::Var& z) const {
  if (z.value().rank() != 2 || z.dim(1) != config_.latent_dim) {
    throw std::invalid_argument("generator: expected M×" + std::to_string(config_.latent_dim) + " latents, got " +
                                shape_string(z.shape()));
  }
}

ad::Var Generator::pose_decode(const ad::Var& z) const {
  if (variant_ != GeneratorVariant::kTemplate3d) throw std::logic_error("pose_decode: 2d generator has no pose decoder");
  require_latents(z);
  ad::Var h = lrelu(pose_layers_[0](z));
  h = lrelu(pose_layers_[1](h));
  return ad::pose_activation(pose_layers_[2](h));
}

ad::Var Generator::up_block(const UpBlock3d& block, const ad::Var& x) const {
  const ad::Var up = ad::upsample2x(x);
  ad::Var y = norm_act(block.conv1(up));
  y = ad::instance_norm(block.conv2(y));
  return lrelu(ad::add(y, block.skip(up)));
}

ad::Var Generator::template_features() const {
  if (variant_ != GeneratorVariant::kTemplate3d) throw std::logic_error("template_features: 2d generator has no template");
  const Shape& t = template_.shape();
  ad::Var x = ad::reshape(template_, {1, t[0], t[1], t[2], t[3]});
  x = up_block(template_up0_, x);
  x = up_block(template_up1_, x);
  return ad::reshape(x, {config_.template_out, kVolumeSize, kVolumeSize, kVolumeSize});
}

ad::Var Generator::warp(const ad::Var& features, const ad::Var& poses) const {
  return ad::warp_volume(features, poses);
}

ad::Var Generator::project(const ad::Var& warped) const {
  const Index m = warped.dim(0);
  ad::Var folded = ad::reshape(warped, {m, config_.template_out * kVolumeSize, kVolumeSize, kVolumeSize});
  ad::Var h = norm_act(project0_(folded));
  return norm_act(project1_(h));
}

ad::Var Generator::instance_features(const ad::Var& z) const {
  require_latents(z);
  if (variant_ == GeneratorVariant::kTemplate3d) {
    return project(warp(template_features(), pose_decode(z)));
  }
  const Index m = z.dim(0);
  ad::Var h = lrelu(plain_fc_(z));
  h = ad::reshape(h, {m, config_.template_channels, kTemplateSize, kTemplateSize});
  h = norm_act(plain0_(ad::upsample2x(h)));
  h = norm_act(plain1_(ad::upsample2x(h)));
  return norm_act(plain2_(h));
}

ad::Var Generator::render(const ad::Var& features) const {
  const Shape& s = features.shape();
  if (s.size() != 4 || s[1] != config_.feature_channels || s[2] != kFeatureSize || s[3] != kFeatureSize) {
    throw std::invalid_argument("render: expected B×" + std::to_string(config_.feature_channels) + "×16×16, got " +
                                shape_string(s));
  }
  ad::Var h = norm_act(render0_(ad::upsample2x(features)));
  h = norm_act(render1_(ad::upsample2x(h)));
  return render_out_(h);
}

Generator::Output Generator::generate(const ad::Var& latents, Index instances) const {
  require_latents(latents);
  if (instances < 1 || latents.dim(0) == 0 || latents.dim(0) % instances != 0) {
    throw std::invalid_argument("generate: latent rows must be a non-empty multiple of the instance count");
  }
  ad::Var pooled = ad::mean_groups(instance_features(latents), instances);
  return {render(pooled), pooled};
}

ad::Var Generator::generate_single(const ad::Var& z) const { return render(instance_features(z)); }

// --------------------------------------------------------- Discriminator

Discriminator::Discriminator(const NetConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const Index b = config_.critic_base;
  conv0_ = make_conv("conv0", 1, b, k4x4s2, false, rng);
  conv1_ = make_conv("conv1", b, 2 * b, k4x4s2, false, rng);
  conv2_ = make_conv("conv2", 2 * b, 4 * b, k4x4s2, false, rng);
  conv3_ = make_conv("conv3", 4 * b, 8 * b, k4x4s2, false, rng);
  head_ = make_linear("head", 8 * b * 4 * 4, 1, rng);
}

ad::Var Discriminator::logits(const ad::Var& images) const {
  require_images(images, "discriminate");
  ad::Var h = lrelu(conv0_(images));
  h = norm_act(conv1_(h));
  h = norm_act(conv2_(h));
  h = norm_act(conv3_(h));
  const Index batch = h.dim(0);
  return head_(ad::reshape(h, {batch, h.value().size() / batch}));
}

ad::Var Discriminator::discriminate(const ad::Var& images) const { return ad::sigmoid(logits(images)); }

// --------------------------------------------------------------- Encoder

Encoder::Encoder(const NetConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const Index b = config_.critic_base;
  conv0_ = make_conv("derender.conv0", 1, b, k4x4s2, false, rng);
  conv1_ = make_conv("derender.conv1", b, 2 * b, k4x4s2, false, rng);
  derender_head_ = make_conv("derender.head", 2 * b, config_.feature_channels, k1x1, false, rng);
  conv2_ = make_conv("instances.conv2", config_.feature_channels, 4 * b, k4x4s2, false, rng);
  conv3_ = make_conv("instances.conv3", 4 * b, 8 * b, k4x4s2, false, rng);
  head_ = make_linear("instances.head", 8 * b * 4 * 4, config_.instances * config_.latent_dim, rng);
}

ad::Var Encoder::derender(const ad::Var& images) const {
  require_images(images, "encode");
  ad::Var h = lrelu(conv0_(images));
  h = norm_act(conv1_(h));
  return derender_head_(h);
}

ad::Var Encoder::decode_instances(const ad::Var& derendered) const {
  ad::Var h = norm_act(conv2_(derendered));
  h = norm_act(conv3_(h));
  const Index batch = h.dim(0);
  h = head_(ad::reshape(h, {batch, h.value().size() / batch}));
  return ad::reshape(h, {batch * config_.instances, config_.latent_dim});
}

Encoder::Output Encoder::encode(const ad::Var& images) const {
  ad::Var derendered = derender(images);
  return {decode_instances(derendered), derendered};
}

// ------------------------------------------------------------ Utilities

ad::Var latents_to_var(const LatentSet& z) {
  Tensorf t({z.cols(), z.rows()});
  t.matrix(z.cols(), z.rows()) = z.transpose();
  return ad::constant(std::move(t));
}

LatentSet var_to_latents(const Tensorf& rows, Index sample, Index instances) {
  const Index total = rows.dim(0), d = rows.dim(1);
  if (instances < 0) instances = total;
  if ((sample + 1) * instances > total) throw std::out_of_range("var_to_latents: sample out of range");
  return rows.matrix(total, d).middleRows(sample * instances, instances).transpose();
}

Tensorf generate_image(const Generator& g, const LatentSet& z) {
  if (z.cols() < 1) throw std::invalid_argument("generate: empty latent set");
  return g.generate(latents_to_var(z), z.cols()).image.value().reshaped({1, kImageSize, kImageSize});
}

Tensorf generate_single_image(const Generator& g, const Eigen::VectorXf& z) {
  return g.generate_single(latents_to_var(z)).value().reshaped({1, kImageSize, kImageSize});
}

float discriminate_image(const Discriminator& d, const Tensorf& image) {
  return d.discriminate(ad::constant(image.reshaped({1, 1, kImageSize, kImageSize}))).value()[0];
}

}  // namespace insegan
