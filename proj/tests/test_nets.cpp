#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "insegan/geometry.hpp"
#include "insegan/nets.hpp"

#include <cmath>
#include <random>

using namespace insegan;

namespace {

// Small widths keep these structural tests fast.
NetConfig tiny(Index n = 3) {
  NetConfig c = NetConfig::desk(n);
  c.template_channels = 4;
  c.template_hidden = 4;
  c.template_out = 2;
  c.feature_channels = 8;
  c.projector_hidden = 8;
  c.renderer_hidden0 = 4;
  c.renderer_hidden1 = 4;
  c.critic_base = 4;
  c.pose_hidden0 = 16;
  c.pose_hidden1 = 8;
  return c;
}

LatentSet random_latents(std::mt19937_64& rng, Index d, Index n) {
  std::normal_distribution<float> normal;
  LatentSet z(d, n);
  for (Index i = 0; i < z.size(); ++i) z.data()[i] = normal(rng);
  return z;
}

Tensorf random_images(std::mt19937_64& rng, Index b) {
  std::normal_distribution<float> normal;
  Tensorf x({b, 1, kImageSize, kImageSize});
  for (Index i = 0; i < x.size(); ++i) x[i] = normal(rng);
  return x;
}

bool bitwise_equal(const Tensorf& a, const Tensorf& b) {
  return a.shape() == b.shape() && (a.array() == b.array()).all();
}

}  // namespace

TEST_CASE("pose_decode: width, determinism and batching") {
  const Generator g(tiny(), GeneratorVariant::kTemplate3d, 1);
  std::mt19937_64 rng(2);
  const LatentSet z = random_latents(rng, 128, 4);
  const auto batched = g.pose_decode(latents_to_var(z)).value();
  CHECK(batched.shape() == Shape{4, 6});
  CHECK(bitwise_equal(batched, g.pose_decode(latents_to_var(z)).value()));
  for (Index i = 0; i < 4; ++i) {
    const auto single = g.pose_decode(latents_to_var(z.col(i))).value();
    for (Index j = 0; j < 6; ++j) CHECK(single[j] == doctest::Approx(batched[i * 6 + j]).epsilon(1e-6));
  }
  CHECK_THROWS_AS(g.pose_decode(ad::constant(Tensorf({2, 64}))), std::invalid_argument);
}

TEST_CASE("pose MLP init: fixed or fan-in") {
  const auto weight_std = [](const Generator& g, const std::string& name) {
    const ad::Var* w = g.find_parameter(name);
    REQUIRE(w != nullptr);
    const auto a = w->value().array().cast<double>();
    return std::sqrt((a - a.mean()).square().mean());
  };
  NetConfig c = NetConfig::desk(2);
  c.pose_init = PoseInit::kFixed;
  const Generator fixed(c, GeneratorVariant::kTemplate3d, 3);
  c.pose_init = PoseInit::kFanIn;
  const Generator fan_in(c, GeneratorVariant::kTemplate3d, 3);
  CHECK(weight_std(fixed, "pose.fc0.weight") == doctest::Approx(0.02).epsilon(0.05));
  CHECK(weight_std(fan_in, "pose.fc0.weight") == doctest::Approx(std::sqrt(2.0 / 128)).epsilon(0.05));
  CHECK(weight_std(fan_in, "pose.fc1.weight") == doctest::Approx(std::sqrt(2.0 / 128)).epsilon(0.05));
  CHECK(weight_std(fan_in, "pose.fc2.weight") == doctest::Approx(std::sqrt(2.0 / 64)).epsilon(0.1));
  CHECK(weight_std(fan_in, "project.conv0.weight") == doctest::Approx(0.02).epsilon(0.05));
  CHECK(parse_pose_init(to_string(PoseInit::kFanIn)) == PoseInit::kFanIn);
  CHECK_THROWS_AS(parse_pose_init("he"), std::invalid_argument);
}

TEST_CASE("template_decode: shape, connectivity and no dead path") {
  const Generator g(NetConfig::full(), GeneratorVariant::kTemplate3d, 3);
  const auto decoded = g.template_features();
  CHECK(decoded.shape() == Shape{16, 16, 16, 16});

  const Generator small(tiny(), GeneratorVariant::kTemplate3d, 3);
  const auto out = small.template_features();
  ad::backward(ad::mean_squared_error(out, ad::constant(Tensorf(out.shape(), 0.3f))));
  const ad::Var* t = small.find_parameter("template");
  REQUIRE(t != nullptr);
  CHECK(t->grad().array().abs().maxCoeff() > 0.0f);

  const Tensorf before = out.value();
  const_cast<ad::Var*>(t)->mutable_value().array() *= 2.0f;
  CHECK_FALSE(bitwise_equal(before, small.template_features().value()));
}

TEST_CASE("make_instance_features: shape and stage-by-stage composition") {
  const Generator g(NetConfig::full(2), GeneratorVariant::kTemplate3d, 4);
  std::mt19937_64 rng(5);
  const LatentSet z = random_latents(rng, 128, 1);
  CHECK(g.instance_features(latents_to_var(z)).shape() == Shape{1, 128, 16, 16});

  const Generator s(tiny(), GeneratorVariant::kTemplate3d, 4);
  const auto zv = latents_to_var(random_latents(rng, 128, 2));
  const Tensorf composed = s.instance_features(zv).value();

  // manual pipeline: decode pose -> Rodrigues/grid/sample on the decoded
  // template -> fold -> projector
  const Tensorf poses = s.pose_decode(zv).value();
  const Tensorf decoded = s.template_features().value();
  Tensorf warped({2, decoded.dim(0), 16, 16, 16});
  for (Index m = 0; m < 2; ++m) {
    Eigen::Matrix<float, 6, 1> p;
    for (int j = 0; j < 6; ++j) p[j] = poses[m * 6 + j];
    const auto tr = geometry::pose_to_transform(geometry::PoseVector6<float>::from_vector(p));
    const auto grid = geometry::affine_grid(tr, geometry::VolumeShape{16, 16, 16});
    warped.array().segment(m * decoded.size(), decoded.size()) = geometry::trilinear_sample(decoded, grid).array();
  }
  const Tensorf manual = s.project(ad::constant(warped)).value();
  CHECK(bitwise_equal(manual, composed));

  // identical decoded poses give identical instance features
  const auto twice = s.instance_features(latents_to_var(LatentSet(zv.value().matrix(2, 128).row(0).transpose().replicate(1, 2)))).value();
  CHECK((twice.array().segment(0, twice.size() / 2) == twice.array().segment(twice.size() / 2, twice.size() / 2)).all());
}

TEST_CASE("generate: shape, mean of one, permutation invariance") {
  const Generator g(NetConfig::full(5), GeneratorVariant::kTemplate3d, 6);
  std::mt19937_64 rng(7);
  const LatentSet z = random_latents(rng, 128, 5);
  const Tensorf x = generate_image(g, z);
  CHECK(x.shape() == Shape{1, 64, 64});

  LatentSet permuted(128, 5);
  const int order[5] = {3, 0, 4, 1, 2};
  for (int i = 0; i < 5; ++i) permuted.col(i) = z.col(order[i]);
  CHECK(bitwise_equal(x, generate_image(g, permuted)));

  const Generator s(tiny(1), GeneratorVariant::kTemplate3d, 6);
  const LatentSet one = random_latents(rng, 128, 1);
  const auto out = s.generate(latents_to_var(one), 1);
  CHECK(bitwise_equal(out.pooled.value(), s.instance_features(latents_to_var(one)).value()));
  CHECK(bitwise_equal(generate_image(s, one), generate_single_image(s, one.col(0))));
  CHECK_THROWS_AS(generate_image(s, LatentSet(128, 0)), std::invalid_argument);
}

TEST_CASE("generate_single equals the renderer applied to one instance map") {
  const Generator g(tiny(), GeneratorVariant::kTemplate3d, 8);
  std::mt19937_64 rng(9);
  const Eigen::VectorXf z = random_latents(rng, 128, 1);
  const auto single = generate_single_image(g, z);
  CHECK(single.shape() == Shape{1, 64, 64});
  const auto manual = g.render(ad::constant(g.instance_features(latents_to_var(z)).value())).value();
  CHECK(bitwise_equal(single.reshaped({1, 1, 64, 64}), manual));
}

TEST_CASE("discriminate: range, batching and zeros") {
  const Discriminator d(tiny(), 10);
  std::mt19937_64 rng(11);
  const Tensorf x = random_images(rng, 3);
  const Tensorf scores = d.discriminate(ad::constant(x)).value();
  CHECK(scores.shape() == Shape{3, 1});
  for (Index b = 0; b < 3; ++b) {
    CHECK(scores[b] >= 0.0f);
    CHECK(scores[b] <= 1.0f);
    Tensorf one({1, 64, 64}, x.array().segment(b * 4096, 4096));
    CHECK(discriminate_image(d, one) == doctest::Approx(scores[b]).epsilon(1e-5));
  }
  CHECK(std::isfinite(discriminate_image(d, Tensorf({1, 64, 64}))));
  CHECK_THROWS_AS(d.discriminate(ad::constant(Tensorf({1, 1, 32, 32}))), std::invalid_argument);
}

TEST_CASE("encode: shapes and determinism") {
  const NetConfig c = NetConfig::full(5);
  const Encoder e(c, 12);
  std::mt19937_64 rng(13);
  const Tensorf x = random_images(rng, 2);
  const auto out = e.encode(ad::constant(x));
  CHECK(out.latents.shape() == Shape{10, 128});
  CHECK(out.derendered.shape() == Shape{2, 128, 16, 16});
  CHECK(bitwise_equal(out.latents.value(), e.encode(ad::constant(x)).latents.value()));
  CHECK(var_to_latents(out.latents.value(), 1, 5).cols() == 5);
  CHECK_THROWS_AS(e.encode(ad::constant(Tensorf({1, 2, 64, 64}))), std::invalid_argument);
}

TEST_CASE("2d generator variant") {
  const Generator g(tiny(), GeneratorVariant::kPlain2d, 14);
  for (const auto& p : g.parameters()) CHECK(p.name.find("template") == std::string::npos);
  std::mt19937_64 rng(15);
  const LatentSet z = random_latents(rng, 128, 3);
  CHECK(generate_image(g, z).shape() == Shape{1, 64, 64});
  CHECK(g.instance_features(latents_to_var(z)).shape() == Shape{3, 8, 16, 16});
  LatentSet permuted = z;
  permuted.col(0).swap(permuted.col(2));
  CHECK(bitwise_equal(generate_image(g, z), generate_image(g, permuted)));
  CHECK_THROWS_AS(g.pose_decode(latents_to_var(z)), std::logic_error);
  CHECK_THROWS_AS(parse_generator_variant("4d"), std::invalid_argument);
}

TEST_CASE("every parameter of each network is reached by its loss") {
  std::mt19937_64 rng(16);
  const NetConfig c = tiny(2);
  const Generator g(c, GeneratorVariant::kTemplate3d, 17);
  const Discriminator d(c, 18);
  const Encoder e(c, 19);
  const Tensorf real = random_images(rng, 2);
  const LatentSet z = random_latents(rng, 128, 4);

  const auto fake = g.generate(latents_to_var(z), 2);
  ad::backward(ad::scale(ad::mean_log(d.discriminate(fake.image), 1e-7f, false), -1.0f));
  for (const auto& p : g.parameters()) CHECK_MESSAGE(p.var.grad().array().abs().maxCoeff() > 0.0f, p.name);
  for (const auto& p : d.parameters()) CHECK_MESSAGE(p.var.grad().array().abs().maxCoeff() > 0.0f, p.name);

  const auto enc = e.encode(ad::constant(real));
  ad::backward(ad::add(ad::mean_squared_error(enc.latents, ad::constant(Tensorf(enc.latents.shape(), 0.1f))),
                       ad::mean_squared_error(enc.derendered, ad::constant(Tensorf(enc.derendered.shape(), 0.1f)))));
  for (const auto& p : e.parameters()) CHECK_MESSAGE(p.var.grad().array().abs().maxCoeff() > 0.0f, p.name);
}
