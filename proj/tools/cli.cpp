#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

namespace insegan::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using scenegen::Dataset;

namespace {

std::string scene_id(Index index) {
  char name[32];
  std::snprintf(name, sizeof name, "scene_%06lld", static_cast<long long>(index));
  return name;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return json::parse(in);
}

DepthMap image_plane(const Tensorf& images, Index index) {
  DepthMap out(kImageSize, kImageSize);
  std::copy_n(images.data() + index * kImageSize * kImageSize, kImageSize * kImageSize, out.data());
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<Index> require_split(const Dataset& data, const std::string& split) {
  auto positions = data.split(split);
  if (positions.empty()) throw std::runtime_error("dataset has no '" + split + "' scenes");
  return positions;
}

// Training flags shared by `train` and `ablate`.
struct TrainFlags {
  std::string config_file;
  std::string width = "desk";
  std::optional<int> epochs;
  std::optional<Index> batch;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant, aligner, losses, pose_init;
  std::optional<int> checkpoint_every, validate_every;
  std::optional<double> lr;
  bool auto_reset = false;
  double noise = 0.0;

  void add_to(CLI::App* app, bool with_losses = true) {
    app->add_option("--config", config_file, "JSON training config to start from")->check(CLI::ExistingFile);
    app->add_option("--width", width, "network widths when no config is given")
        ->check(CLI::IsMember({"desk", "full"}));
    app->add_option("--epochs", epochs)->check(CLI::PositiveNumber);
    app->add_option("--batch", batch)->check(CLI::PositiveNumber);
    app->add_option("--seed", seed);
    app->add_option("--variant", variant, "generator variant")->check(CLI::IsMember({"3d", "2d"}));
    app->add_option("--pose-init", pose_init, "pose MLP weight init")->check(CLI::IsMember({"fixed", "fan-in"}));
    app->add_option("--aligner", aligner)->check(CLI::IsMember({"ot", "hungarian", "greedy"}));
    if (with_losses) app->add_option("--losses", losses, "encoder loss set, e.g. aip");
    app->add_option("--checkpoint-every", checkpoint_every)->check(CLI::NonNegativeNumber);
    app->add_option("--validate-every", validate_every)->check(CLI::NonNegativeNumber);
    app->add_option("--lr", lr)->check(CLI::PositiveNumber);
    app->add_flag("--auto-reset", auto_reset, "reset optimizers on divergence instead of stopping");
    app->add_option("--noise", noise, "std of additive Gaussian noise on training inputs")
        ->check(CLI::NonNegativeNumber);
  }

  TrainConfig build(const Dataset& data) const {
    TrainConfig c = config_file.empty() ? default_config(data, width == "desk")
                                        : TrainConfig::from_json(read_json(config_file));
    if (epochs) c.epochs = *epochs;
    if (batch) c.batch_size = *batch;
    if (seed) c.seed = *seed;
    if (variant) c.variant = parse_generator_variant(*variant);
    if (pose_init) c.net.pose_init = parse_pose_init(*pose_init);
    if (aligner) c.aligner = parse_aligner(*aligner);
    if (losses) {
      const EncoderLossWeights w = parse_loss_set(*losses);
      c.encoder.use_alignment = w.use_alignment;
      c.encoder.use_intermediate = w.use_intermediate;
      c.encoder.use_pose = w.use_pose;
    }
    if (checkpoint_every) c.checkpoint_every = *checkpoint_every;
    if (validate_every) c.validate_every = *validate_every;
    if (lr) c.adam.lr = static_cast<float>(*lr);
    if (auto_reset) c.auto_reset = true;
    if (c.instances() != data.instances()) {
      throw std::invalid_argument("config expects " + std::to_string(c.instances()) + " instances, dataset has " +
                                  std::to_string(data.instances()));
    }
    c.validate();
    return c;
  }
};

struct SegmentFlags {
  std::optional<float> tau;
  int min_area = 0;
  int median = 0;

  void add_to(CLI::App* app) {
    app->add_option("--tau", tau, "foreground threshold (default: background level + 0.05)");
    app->add_option("--min-area", min_area, "drop connected segments smaller than this")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--median", median, "median filter radius before thresholding")->check(CLI::NonNegativeNumber);
  }

  SegmentOptions build(const Dataset& data) const {
    SegmentOptions o = default_segment_options(data);
    if (tau) o.tau = *tau;
    o.min_area = min_area;
    o.median_radius = median;
    return o;
  }
};

std::ostream& print_history_line(std::ostream& out, const EpochMetrics& e) {
  out << "epoch " << e.epoch << std::fixed << std::setprecision(4) << "  D " << e.mean.discriminator << "  G "
      << e.mean.generator << "  Ea " << e.mean.align << "  Ei " << e.mean.intermediate << "  Ep " << e.mean.pose;
  if (e.validation_miou) out << "  val_miou " << *e.validation_miou;
  out << std::defaultfloat << std::endl;
  return out;
}

// Per-label colours for segmentation plots; label 0 is black.
constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette{{{0, 0, 0},
                                                               {230, 25, 75},
                                                               {60, 180, 75},
                                                               {0, 130, 200},
                                                               {245, 130, 48},
                                                               {145, 30, 180},
                                                               {70, 240, 240},
                                                               {240, 50, 230}}};

int cmd_gen_data(const std::string& out_dir, const std::string& shape, const std::vector<double>& dims, int n,
                 Index count, Index val, Index test, Index hard, Index candidates, double bin_factor,
                 std::uint64_t seed, bool non_overlapping, std::ostream& out) {
  scenegen::DatasetConfig c;
  c.shape = scenegen::ShapeSpec::preset(scenegen::parse_shape_kind(shape));
  if (!dims.empty()) {
    if (dims.size() != 3) throw std::invalid_argument("--dims needs three values");
    c.shape.dims = Eigen::Vector3d(dims[0], dims[1], dims[2]);
  }
  c.instances = n;
  c.train_count = count;
  c.val_count = val;
  c.test_count = test;
  c.hard_test_count = hard;
  c.hard_candidates = hard > 0 ? std::max(candidates, hard) : 0;
  c.bin_factor = bin_factor;
  c.base_seed = seed;
  c.placement = non_overlapping ? scenegen::PlacementMode::kNonOverlapping : scenegen::PlacementMode::kRandom;
  const Dataset data = scenegen::build_dataset(c, out_dir);
  out << "wrote " << data.scenes().size() << " scenes (" << data.split("train").size() << " train, "
      << data.split("val").size() << " val, " << data.split("test").size() << " test) to " << out_dir << '\n';
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out_dir, const TrainFlags& flags,
              const std::string& resume, std::ostream& out) {
  const Dataset data = Dataset::open(data_dir);
  fs::create_directories(out_dir);
  FitOptions options;
  options.output_dir = out_dir;
  options.on_epoch = [&](const EpochMetrics& e) { print_history_line(out, e); };
  const auto val = data.split("val");
  const SegmentOptions seg = default_segment_options(data);
  if (!val.empty()) {
    options.validate = [&](const TrainState& s) {
      return evaluate_model(data, "val", s.generator, s.encoder, seg).mean();
    };
  }

  std::optional<TrainState> state;
  if (!resume.empty()) {
    state.emplace(load_checkpoint(resume));
    if (flags.epochs) state->config.epochs = *flags.epochs;
    out << "resuming from " << resume << " at epoch " << state->epoch << '\n';
  } else {
    state.emplace(flags.build(data));
  }
  write_json(fs::path(out_dir) / "config.json", state->config.to_json());
  const Tensorf images = data.images(require_split(data, "train"), flags.noise, state->config.seed);
  const FitResult r = fit(images, *state, options);
  if (r.diverged) {
    throw std::runtime_error("training diverged: " + r.divergence_message);
  }
  out << "final checkpoint: " << (fs::path(out_dir) / "final.ckpt").string() << '\n';
  return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& data_dir, const std::string& split,
              const std::string& out_dir, const SegmentFlags& flags, std::ostream& out) {
  const Dataset data = Dataset::open(data_dir);
  const TrainState state = load_checkpoint(checkpoint);
  const auto positions = require_split(data, split);
  const SegmentOptions options = flags.build(data);
  const auto results = segment_batch(data.images(positions), state.generator, state.encoder, options);
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const auto& rec = data.scenes()[static_cast<std::size_t>(positions[i])];
    write_mask_with_sidecar(fs::path(out_dir) / scene_id(rec.index), results[i].mask,
                            {{"scene", scene_id(rec.index)},
                             {"seed", rec.seed},
                             {"checkpoint", checkpoint},
                             {"epoch", state.epoch},
                             {"instances", data.instances()},
                             {"tau", options.tau},
                             {"min_area", options.min_area},
                             {"median_radius", options.median_radius}});
  }
  out << "wrote " << results.size() << " masks to " << out_dir << '\n';
  return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& method, const std::string& data_dir,
             const std::string& split, const std::string& report_path, const std::string& checkpoint_id,
             std::ostream& out) {
  const Dataset data = Dataset::open(data_dir);
  EvalReport report;
  if (!method.empty()) {
    report = evaluate_baseline(data, split, method);
  } else {
    if (pred_dir.empty()) throw std::invalid_argument("eval needs --pred or --method");
    const int n = data.instances();
    for (const Index p : require_split(data, split)) {
      const auto& rec = data.scenes()[static_cast<std::size_t>(p)];
      const LabelImage pred = read_label_pgm(fs::path(pred_dir) / (scene_id(rec.index) + ".pgm"));
      LabelImage gt;
      if (pred.rows() == kImageSize && pred.cols() == kImageSize) {
        gt = data.labels64(p);
      } else if (pred.rows() == scenegen::kNativeSize && pred.cols() == scenegen::kNativeSize) {
        gt = data.load_scene(p).labels;
      } else {
        throw std::runtime_error("prediction " + scene_id(rec.index) + " has an unsupported size");
      }
      report.add(scene_id(rec.index), miou(pred, masks_from_labels(gt, n)));
    }
    report.config = {{"pred", pred_dir}};
  }
  report.config["dataset"] = data_dir;
  report.config["split"] = split;
  report.checkpoint_id = checkpoint_id;
  report.per_class[data.class_name()] = report.mean();
  if (!report_path.empty()) write_json(report_path, report.to_json());
  out << report.summary_table();
  return 0;
}

int cmd_ablate(const std::string& data_dir, const std::string& out_dir, const TrainFlags& flags,
               const std::string& losses, const std::string& variants, const std::string& split, bool execute,
               std::ostream& out) {
  const Dataset data = Dataset::open(data_dir);
  TrainFlags base_flags = flags;
  base_flags.losses.reset();
  const auto rows = ablation_configs(base_flags.build(data), split_list(losses), split_list(variants));
  json summary = json::array();
  for (const auto& row : rows) {
    const fs::path dir = fs::path(out_dir) / row.name;
    fs::create_directories(dir);
    write_json(dir / "config.json", row.config.to_json());
    json entry = {{"name", row.name}, {"config", (dir / "config.json").string()}};
    if (execute) {
      out << "== " << row.name << '\n';
      const RunResult r = train_and_evaluate(data, row.config, dir, split, flags.noise, &out);
      write_json(dir / "report.json", r.report.to_json());
      entry["miou"] = r.report.mean();
      entry["diverged"] = r.fit.diverged;
    }
    summary.push_back(entry);
  }
  fs::create_directories(out_dir);
  write_json(fs::path(out_dir) / "ablation.json", summary);
  for (const auto& e : summary) {
    out << std::left << std::setw(12) << e["name"].get<std::string>();
    if (e.contains("miou")) out << "  mIoU " << std::fixed << std::setprecision(4) << e["miou"].get<double>();
    out << std::defaultfloat << "  " << e["config"].get<std::string>() << '\n';
  }
  return 0;
}

int cmd_plot(const std::string& checkpoint, const std::string& data_dir, const std::string& split, Index count,
             const std::string& out_path, const SegmentFlags& flags, std::ostream& out) {
  const Dataset data = Dataset::open(data_dir);
  const TrainState state = load_checkpoint(checkpoint);
  auto positions = require_split(data, split);
  positions.resize(std::min<std::size_t>(positions.size(), static_cast<std::size_t>(std::max<Index>(1, count))));
  const Tensorf images = data.images(positions);
  const auto results = segment_batch(images, state.generator, state.encoder, flags.build(data));
  std::vector<DepthMap> inputs;
  for (std::size_t i = 0; i < positions.size(); ++i) inputs.push_back(image_plane(images, static_cast<Index>(i)));
  if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
  write_plot_grid(out_path, inputs, results);
  out << "wrote " << out_path << '\n';
  return 0;
}

}  // namespace

TrainConfig default_config(const Dataset& data, bool desk_width) {
  TrainConfig c;
  c.net = desk_width ? NetConfig::desk(data.instances()) : NetConfig::full(data.instances());
  if (desk_width) {
    c.batch_size = 16;
    c.epochs = 100;
  }
  return c;
}

SegmentOptions default_segment_options(const Dataset& data) {
  SegmentOptions o;
  o.tau = default_tau(data.background_level());
  return o;
}

EvalReport evaluate_model(const Dataset& data, const std::string& split, const Generator& generator,
                          const Encoder& encoder, const SegmentOptions& options) {
  const auto positions = require_split(data, split);
  const auto results = segment_batch(data.images(positions), generator, encoder, options);
  EvalReport report;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const Index p = positions[i];
    report.add(scene_id(data.scenes()[static_cast<std::size_t>(p)].index),
               miou(results[i].mask, masks_from_labels(data.labels64(p), data.instances())));
  }
  report.per_class[data.class_name()] = report.mean();
  report.config = {{"method", "insegan"}, {"split", split}, {"tau", options.tau}};
  return report;
}

EvalReport evaluate_baseline(const Dataset& data, const std::string& split, const std::string& method) {
  if (method != "kmeans" && method != "spectral") throw std::invalid_argument("unknown baseline '" + method + "'");
  const auto positions = require_split(data, split);
  const Tensorf images = data.images(positions);
  const BaselineOptions options = data.baseline_options();
  EvalReport report;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const auto& rec = data.scenes()[static_cast<std::size_t>(positions[i])];
    const DepthMap x = image_plane(images, static_cast<Index>(i));
    LabelImage pred;
    if (method == "kmeans") {
      std::mt19937_64 rng(rec.seed);
      pred = kmeans_segment(x, data.instances(), data.background_level(), rng, options);
    } else {
      pred = spectral_segment(x, data.instances(), data.background_level(), options, rec.seed);
    }
    report.add(scene_id(rec.index), miou(pred, masks_from_labels(data.labels64(positions[i]), data.instances())));
  }
  report.per_class[data.class_name()] = report.mean();
  report.config = {{"method", method}, {"split", split}, {"depth_scale", options.depth_scale}};
  return report;
}

RunResult train_and_evaluate(const Dataset& data, const TrainConfig& config, const fs::path& out_dir,
                             const std::string& eval_split, double noise_sigma, std::ostream* log) {
  fs::create_directories(out_dir);
  write_json(out_dir / "config.json", config.to_json());
  TrainState state(config);
  FitOptions options;
  options.output_dir = out_dir;
  const SegmentOptions seg = default_segment_options(data);
  if (!data.split("val").empty()) {
    options.validate = [&](const TrainState& s) {
      return evaluate_model(data, "val", s.generator, s.encoder, seg).mean();
    };
  }
  if (log) options.on_epoch = [log](const EpochMetrics& e) { print_history_line(*log, e); };
  RunResult r;
  r.fit = fit(data.images(require_split(data, "train"), noise_sigma, config.seed), state, options);
  r.report = evaluate_model(data, eval_split, state.generator, state.encoder, seg);
  r.report.checkpoint_id = (out_dir / "final.ckpt").string();
  r.report.config["train"] = config.to_json();
  return r;
}

std::vector<AblationRow> ablation_configs(const TrainConfig& base, const std::vector<std::string>& loss_sets,
                                          const std::vector<std::string>& variants) {
  if (loss_sets.empty() || variants.empty()) throw std::invalid_argument("ablate: empty loss or variant list");
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    for (const auto& l : loss_sets) {
      TrainConfig c = base;
      c.variant = parse_generator_variant(v);
      const EncoderLossWeights w = parse_loss_set(l);
      c.encoder.use_alignment = w.use_alignment;
      c.encoder.use_intermediate = w.use_intermediate;
      c.encoder.use_pose = w.use_pose;
      c.validate();
      rows.push_back({to_string(c.variant) + "-" + loss_set_name(w), c});
    }
  }
  return rows;
}

void write_plot_grid(const fs::path& path, const std::vector<DepthMap>& inputs,
                     const std::vector<SegmentationResult>& results) {
  if (inputs.size() != results.size() || inputs.empty()) throw std::invalid_argument("plot: need matching inputs");
  const Index n = static_cast<Index>(results.front().instance_depths.size());
  const Index tile = kImageSize, gap = 2;
  const Index panels = 3 + n;
  const Index width = panels * tile + (panels - 1) * gap;
  const Index height = static_cast<Index>(inputs.size()) * tile + (static_cast<Index>(inputs.size()) - 1) * gap;
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(width * height * 3), 255);
  const auto put = [&](Index row, Index col, const std::array<std::uint8_t, 3>& c) {
    std::copy(c.begin(), c.end(), rgb.begin() + static_cast<std::ptrdiff_t>((row * width + col) * 3));
  };
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    const Index top = static_cast<Index>(s) * (tile + gap);
    // shared grey scale per row so renders compare with the input
    float lo = inputs[s].minCoeff(), hi = inputs[s].maxCoeff();
    lo = std::min(lo, results[s].composite.minCoeff());
    hi = std::max(hi, results[s].composite.maxCoeff());
    const float span = hi > lo ? hi - lo : 1.0f;
    const auto grey = [&](float v) {
      const auto g = static_cast<std::uint8_t>(std::clamp((v - lo) / span, 0.0f, 1.0f) * 255.0f + 0.5f);
      return std::array<std::uint8_t, 3>{g, g, g};
    };
    for (Index p = 0; p < panels; ++p) {
      const Index left = p * (tile + gap);
      for (Index r = 0; r < tile; ++r) {
        for (Index c = 0; c < tile; ++c) {
          std::array<std::uint8_t, 3> px;
          if (p == 0) {
            px = grey(inputs[s](r, c));
          } else if (p == 1) {
            px = grey(results[s].composite(r, c));
          } else if (p == 2) {
            px = kPalette[static_cast<std::size_t>(results[s].mask(r, c)) % kPalette.size()];
          } else {
            px = grey(results[s].instance_depths[static_cast<std::size_t>(p - 3)](r, c));
          }
          put(top + r, left + c, px);
        }
      }
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unsupervised instance segmentation of depth images"};
  app.name("insegan");
  app.require_subcommand(1);

  std::string data_dir, out_dir, split = "test", checkpoint;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic bin dataset");
  std::string shape = "box";
  std::vector<double> dims;
  int n = 5;
  Index count = 0, val = 0, test = 0, hard = 0, candidates = 0;
  double bin_factor = 4.0;
  std::uint64_t seed = 0;
  bool non_overlapping = false;
  gen->add_option("--out", out_dir, "dataset directory")->required();
  gen->add_option("--shape", shape)->check(CLI::IsMember({"box", "cylinder", "cone", "l-block", "t-block"}));
  gen->add_option("--dims", dims, "shape dimensions (three values)")->delimiter(',');
  gen->add_option("--n", n, "instances per scene")->check(CLI::PositiveNumber);
  gen->add_option("--count", count, "training scenes")->required()->check(CLI::PositiveNumber);
  gen->add_option("--val", val, "validation scenes")->check(CLI::NonNegativeNumber);
  gen->add_option("--test", test, "test scenes")->check(CLI::NonNegativeNumber);
  gen->add_option("--hard-test", hard, "keep this many candidates on which K-Means does worst")
      ->check(CLI::NonNegativeNumber);
  gen->add_option("--hard-candidates", candidates, "candidate pool for --hard-test")->check(CLI::NonNegativeNumber);
  gen->add_option("--bin-factor", bin_factor, "bin extent in shape diameters")->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "base seed; scene i uses seed + i");
  gen->add_flag("--non-overlapping", non_overlapping, "keep instance footprints apart");

  auto* train = app.add_subcommand("train", "train generator, discriminator and encoder");
  TrainFlags train_flags;
  std::string resume;
  train->add_option("--data", data_dir)->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", out_dir, "run directory")->required();
  train->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  train_flags.add_to(train);

  auto* infer = app.add_subcommand("infer", "segment every scene of a dataset split");
  SegmentFlags seg_flags;
  infer->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  infer->add_option("--data", data_dir)->required()->check(CLI::ExistingDirectory);
  infer->add_option("--split", split);
  infer->add_option("--out", out_dir, "mask directory")->required();
  seg_flags.add_to(infer);

  auto* eval = app.add_subcommand("eval", "score masks or a baseline against ground truth");
  std::string pred_dir, method, report_path, checkpoint_id;
  eval->add_option("--gt", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  auto* pred_opt = eval->add_option("--pred", pred_dir, "directory of scene_*.pgm masks")->check(CLI::ExistingDirectory);
  eval->add_option("--method", method, "baseline to run instead of --pred")
      ->check(CLI::IsMember({"kmeans", "spectral"}))
      ->excludes(pred_opt);
  eval->add_option("--split", split);
  eval->add_option("--report", report_path, "write the JSON report here");
  eval->add_option("--checkpoint-id", checkpoint_id);

  auto* ablate = app.add_subcommand("ablate", "encoder-loss and generator-variant sweeps");
  TrainFlags ablate_flags;
  std::string losses = "a,ai,aip", variants = "3d";
  bool execute = false;
  ablate->add_option("--data", data_dir)->required()->check(CLI::ExistingDirectory);
  ablate->add_option("--out", out_dir)->required();
  ablate->add_option("--losses", losses, "comma-separated loss sets");
  ablate->add_option("--variants", variants, "comma-separated generator variants");
  ablate->add_option("--split", split, "split scored after training");
  ablate->add_flag("--run", execute, "train and evaluate every row (otherwise only write configs)");
  ablate_flags.add_to(ablate, false);

  auto* plot = app.add_subcommand("plot", "input / render / segmentation / instance grids");
  SegmentFlags plot_flags;
  Index plot_count = 4;
  std::string plot_path;
  plot->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  plot->add_option("--data", data_dir)->required()->check(CLI::ExistingDirectory);
  plot->add_option("--split", split);
  plot->add_option("--count", plot_count, "scenes to draw")->check(CLI::PositiveNumber);
  plot->add_option("--out", plot_path, "output .ppm file")->required();
  plot_flags.add_to(plot);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      return cmd_gen_data(out_dir, shape, dims, n, count, val, test, hard, candidates, bin_factor, seed,
                          non_overlapping, out);
    }
    if (*train) return cmd_train(data_dir, out_dir, train_flags, resume, out);
    if (*infer) return cmd_infer(checkpoint, data_dir, split, out_dir, seg_flags, out);
    if (*eval) return cmd_eval(pred_dir, method, data_dir, split, report_path, checkpoint_id, out);
    if (*ablate) return cmd_ablate(data_dir, out_dir, ablate_flags, losses, variants, split, execute, out);
    if (*plot) return cmd_plot(checkpoint, data_dir, split, plot_count, plot_path, plot_flags, out);
  } catch (const std::invalid_argument& e) {
    err << json{{"error", "invalid_argument"}, {"message", e.what()}}.dump() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << json{{"error", "runtime_error"}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace insegan::cli
