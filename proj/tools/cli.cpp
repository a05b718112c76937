#include "cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deepwriter/deepwriter.hpp"

namespace deepwriter::cli {
namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ArchFlags {
  std::string arch = "deepwriter";
  std::string kernels = "deepwriter";
  double scale = 1.0;
  std::size_t input = 113;
  std::size_t fc_width = 1024;
  double dropout = 0.5;

  void add(CLI::App& app) {
    app.add_option("--arch", arch, "half (one stream) or deepwriter (two streams)")
        ->check(CLI::IsMember({"half", "deepwriter"}))
        ->capture_default_str();
    app.add_option("--kernels", kernels, "first two convolutions: deepwriter (5x5, 3x3) or alexnet (11x11, 5x5)")
        ->check(CLI::IsMember({"deepwriter", "alexnet"}))
        ->capture_default_str();
    app.add_option("--scale", scale, "width multiplier for channels and fully-connected layers")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--input", input, "patch side in pixels")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--fc-width", fc_width, "nominal FC6/FC7 width")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--dropout", dropout, "dropout ratio after FC6 and FC7")->check(CLI::Range(0.0, 0.999))->capture_default_str();
  }

  int streams() const { return arch == "half" ? 1 : 2; }

  ArchitectureSpec spec(std::size_t classes) const {
    PresetOptions o;
    o.num_classes = classes;
    o.input_side = input;
    o.scale = scale;
    o.fc_width = fc_width;
    o.dropout = dropout;
    return kernels == "alexnet" ? alexnet_kernel_preset(o) : deepwriter_preset(o);
  }
};

struct TrainFlags {
  std::string manifest;
  std::string out;
  std::string metrics_out;
  std::string init = "gaussian";
  double init_std = Network<float>::kInitStd;
  std::size_t threads = 0;
  long long val_every = 0;
  long long log_every = 0;
  double ratio = PatchPlan::kEnglishSentenceRatio;
  TrainConfig config;

  void add(CLI::App& app) {
    app.add_option("--manifest", manifest, "split manifest (JSON lines)")->required();
    app.add_option("--out", out, "checkpoint to write")->required();
    app.add_option("--batch", config.batch_size, "mini-batch size")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--momentum", config.momentum, "SGD momentum")->capture_default_str();
    app.add_option("--weight-decay", config.weight_decay, "L2 weight decay")->capture_default_str();
    app.add_option("--lr", config.base_lr, "base learning rate")->capture_default_str();
    app.add_option("--lr-drop", config.lr_drop_factor, "learning-rate multiplier per step")->capture_default_str();
    app.add_option("--lr-step", config.lr_step, "iterations between learning-rate drops")->capture_default_str();
    app.add_option("--stop-iter", config.stop_iter, "total iterations")->capture_default_str();
    app.add_option("--seed", config.seed, "seed for initialization, sampling and dropout")->capture_default_str();
    app.add_option("--init", init, "weight initialization: gaussian (N(0, init-std)) or fan-in (N(0, 2/fan_in))")
        ->check(CLI::IsMember({"gaussian", "fan-in"}))
        ->capture_default_str();
    app.add_option("--init-std", init_std, "standard deviation of gaussian initialization")->capture_default_str();
    app.add_option("--ratio", ratio, "patch sampling ratio for validation")->capture_default_str();
    app.add_option("--val-every", val_every, "iterations between validations (0: lr-step/10)")->capture_default_str();
    app.add_option("--log-every", log_every, "iterations between metric lines (0: val-every)")->capture_default_str();
    app.add_option("--threads", threads, "worker threads (default: $DEEPWRITER_THREADS or 1)");
    app.add_option("--metrics-out", metrics_out, "also write metrics as JSON lines to this file");
  }
};

std::size_t resolve_threads(std::size_t flag) {
  if (flag > 0) return flag;
  const char* env = std::getenv("DEEPWRITER_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw UsageError(std::string("DEEPWRITER_THREADS must be a positive integer, got '") + env + "'");
  return static_cast<std::size_t>(v);
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void print_shapes(const ArchitectureSpec& spec, int streams, std::ostream& out) {
  for (const auto& row : output_shapes(spec)) out << row.label << ' ' << format_dims(row.dims) << '\n';
  out << "streams=" << streams << " params=" << Network<float>::zeros(spec, streams).param_count() << '\n';
}

int do_train(const TrainFlags& f, const ArchitectureSpec& spec, int streams, const RunPhase& phase,
             std::ostream& out) {
  const auto entries = read_manifest(f.manifest);
  const Dataset data = load_dataset(entries);
  TrainOptions opts;
  opts.eval_plan = PatchPlan::for_side(spec.input_side, f.ratio);
  opts.val_every = f.val_every;
  opts.log_every = f.log_every;
  opts.threads = resolve_threads(f.threads);
  opts.init.std = f.init_std;
  opts.init.fan_in_scaled = f.init == "fan-in";

  std::ofstream metrics;
  if (!f.metrics_out.empty()) {
    metrics.open(f.metrics_out);
    if (!metrics) throw IoError("cannot write metrics file '" + f.metrics_out + "'");
  }
  opts.on_metrics = [&](const MetricsRecord& m) {
    out << format_metrics(m) << '\n' << std::flush;
    if (metrics.is_open()) metrics << metrics_json(m) << '\n' << std::flush;
  };
  auto result = train<float>(spec, streams, f.config, data, phase, opts);
  save_checkpoint(make_checkpoint(result.network, data.labels, result.state.iteration, &result.state), f.out);
  out << "model=" << f.out << " iterations=" << result.state.iteration << '\n';
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Writer identification from handwriting patches", "deepwriter"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // synth
  SynthOptions synth;
  std::string synth_out, script = "latin";
  auto* synth_cmd = app.add_subcommand("synth", "Render a synthetic handwriting corpus with a split manifest");
  synth_cmd->add_option("--writers", synth.num_writers, "number of writers")->capture_default_str();
  synth_cmd->add_option("--samples", synth.samples_per_writer, "lines per writer")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "corpus seed")->capture_default_str();
  synth_cmd->add_option("--script", script, "glyph generator: latin or block")
      ->check(CLI::IsMember({"latin", "block"}))
      ->capture_default_str();
  synth_cmd->add_option("--height", synth.size.canvas_height, "line height in pixels")->capture_default_str();
  synth_cmd->add_option("--min-glyphs", synth.size.min_glyphs, "fewest glyphs per line")->capture_default_str();
  synth_cmd->add_option("--max-glyphs", synth.size.max_glyphs, "most glyphs per line")->capture_default_str();
  synth_cmd->add_option("--out", synth_out, "output directory")->required();

  // split
  std::string split_manifest, split_dir, split_out;
  std::uint64_t split_seed = 0;
  auto* split_cmd = app.add_subcommand("split", "Assign train/val/test at 4:1:1 per writer");
  auto* split_src = split_cmd->add_option("--manifest", split_manifest, "input manifest");
  split_cmd->add_option("--dir", split_dir, "dataset root laid out as <root>/<writer>/<image>")->excludes(split_src);
  split_cmd->add_option("--seed", split_seed, "shuffle seed")->capture_default_str();
  split_cmd->add_option("--out", split_out, "output manifest")->required();

  // train
  ArchFlags train_arch;
  TrainFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "Train from scratch");
  train_arch.add(*train_cmd);
  train_flags.add(*train_cmd);

  // finetune
  ArchFlags ft_arch;
  TrainFlags ft_flags;
  ft_flags.config = TrainConfig::finetune_defaults();
  std::string ft_from;
  double ft_mult = RunPhase::finetune(Checkpoint{}).classifier_lr_mult;
  auto* ft_cmd = app.add_subcommand("finetune", "Initialize the streams from a checkpoint and train a new classifier");
  ft_cmd->add_option("--from", ft_from, "source checkpoint")->required();
  ft_cmd->add_option("--arch", ft_arch.arch, "half (one stream) or deepwriter (two streams)")
      ->check(CLI::IsMember({"half", "deepwriter"}))
      ->capture_default_str();
  ft_cmd->add_option("--classifier-lr-mult", ft_mult, "learning-rate multiplier of the new classifier")->capture_default_str();
  ft_flags.add(*ft_cmd);

  // eval
  std::string eval_model, eval_manifest, eval_split = "test";
  double eval_ratio = PatchPlan::kEnglishSentenceRatio;
  std::size_t eval_window = 0, eval_threads = 0, eval_stride = 0;
  bool eval_rows = false;
  auto* eval_cmd = app.add_subcommand("eval", "Top-1 identification accuracy on a manifest split");
  eval_cmd->add_option("--model", eval_model, "checkpoint")->required();
  eval_cmd->add_option("--manifest", eval_manifest, "split manifest")->required();
  eval_cmd->add_option("--split", eval_split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  eval_cmd->add_option("--ratio", eval_ratio, "patch sampling ratio")->capture_default_str();
  eval_cmd->add_option("--stride", eval_stride, "scan stride (0: patch side)")->capture_default_str();
  eval_cmd->add_option("--window", eval_window, "identify every run of k consecutive patches instead of whole images");
  eval_cmd->add_option("--threads", eval_threads, "worker threads (default: $DEEPWRITER_THREADS or 1)");
  eval_cmd->add_flag("--rows", eval_rows, "print one line per identification");

  // identify
  std::string id_model, id_image;
  double id_ratio = PatchPlan::kEnglishSentenceRatio;
  std::size_t id_stride = 0;
  auto* id_cmd = app.add_subcommand("identify", "Identify the writer of one image");
  id_cmd->add_option("--model", id_model, "checkpoint")->required();
  id_cmd->add_option("--image", id_image, "PNG or PGM image")->required();
  id_cmd->add_option("--ratio", id_ratio, "patch sampling ratio")->capture_default_str();
  id_cmd->add_option("--stride", id_stride, "scan stride (0: patch side)")->capture_default_str();

  // inspect
  std::string inspect_model;
  ArchFlags inspect_arch;
  std::size_t inspect_classes = 2;
  auto* inspect_cmd = app.add_subcommand("inspect", "Print the per-layer output shapes of a model or preset");
  auto* inspect_model_opt = inspect_cmd->add_option("--model", inspect_model, "checkpoint");
  inspect_arch.add(*inspect_cmd);
  inspect_cmd->add_option("--classes", inspect_classes, "number of writers")->check(CLI::PositiveNumber)->capture_default_str();
  for (const char* name : {"--arch", "--kernels", "--scale", "--input", "--fc-width", "--dropout", "--classes"}) {
    inspect_cmd->get_option(name)->excludes(inspect_model_opt);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help(argc > 1 ? (app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name()) : "");
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\nrun with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (*synth_cmd) {
      synth.script = parse_script(script);
      const auto entries = generate_synthetic_corpus(synth, synth_out);
      out << "writers=" << synth.num_writers << " images=" << entries.size()
          << " manifest=" << (fs::path(synth_out) / "manifest.jsonl").string() << '\n';
    } else if (*split_cmd) {
      if (split_manifest.empty() && split_dir.empty()) throw UsageError("split needs --manifest or --dir");
      std::vector<ManifestEntry> entries;
      if (!split_dir.empty()) {
        entries = manifest_from_directory(split_dir);
        for (auto& e : entries) e.path = (fs::path(split_dir) / e.path).string();
      } else {
        entries = read_manifest(split_manifest);
      }
      entries = split_per_writer(std::move(entries), split_seed);
      const fs::path base = fs::absolute(fs::path(split_out)).parent_path();
      for (auto& e : entries) e.path = fs::absolute(e.path).lexically_relative(base).generic_string();
      write_manifest(split_out, entries);
      std::size_t n[3] = {0, 0, 0};
      for (const auto& e : entries) ++n[static_cast<int>(*e.split)];
      out << "writers=" << writer_labels(entries).size() << " train=" << n[0] << " val=" << n[1]
          << " test=" << n[2] << " manifest=" << split_out << '\n';
    } else if (*train_cmd) {
      const auto labels = writer_labels(read_manifest(train_flags.manifest));
      return do_train(train_flags, train_arch.spec(labels.size()), train_arch.streams(), RunPhase::scratch(), out);
    } else if (*ft_cmd) {
      const Checkpoint source = load_checkpoint(ft_from);
      auto spec = parse_architecture(source.architecture);
      spec.num_classes = writer_labels(read_manifest(ft_flags.manifest)).size();
      RunPhase phase = RunPhase::finetune(source);
      phase.classifier_lr_mult = ft_mult;
      return do_train(ft_flags, spec, ft_arch.streams(), phase, out);
    } else if (*eval_cmd) {
      const Checkpoint ckpt = load_checkpoint(eval_model);
      const auto net = network_from_checkpoint<float>(ckpt);
      const Dataset data = load_dataset(read_manifest(eval_manifest));
      if (data.labels != ckpt.labels) {
        throw DomainError("manifest writers do not match the " + std::to_string(ckpt.labels.size()) +
                          " writers the model was trained on");
      }
      PatchPlan plan = PatchPlan::for_side(net.input_side(), eval_ratio);
      if (eval_stride) plan.scan_stride = eval_stride;
      const auto& items = data.split(parse_split(eval_split));
      const std::size_t threads = resolve_threads(eval_threads);
      const auto report = eval_window ? evaluate_windows(net, std::span(items), plan, eval_window, threads)
                                      : evaluate(net, std::span(items), plan, threads);
      if (eval_rows) {
        for (const auto& r : report.rows) {
          out << "item=" << r.item;
          if (eval_window) out << " window=" << r.window;
          out << " truth=" << ckpt.labels[r.truth] << " predicted=" << ckpt.labels[r.predicted]
              << " confidence=" << fixed(r.scores[r.predicted], 6) << '\n';
        }
      }
      out << "accuracy=" << fixed(report.accuracy) << " correct=" << report.correct
          << " total=" << report.rows.size() << '\n';
    } else if (*id_cmd) {
      const Checkpoint ckpt = load_checkpoint(id_model);
      const auto net = network_from_checkpoint<float>(ckpt);
      PatchPlan plan = PatchPlan::for_side(net.input_side(), id_ratio);
      if (id_stride) plan.scan_stride = id_stride;
      const auto id = identify(net, load_image(id_image), plan);
      out << "writer=" << ckpt.labels.at(id.writer) << " confidence=" << fixed(id.scores[id.writer], 6) << '\n';
    } else if (*inspect_cmd) {
      if (!inspect_model.empty()) {
        const Checkpoint ckpt = load_checkpoint(inspect_model);
        print_shapes(parse_architecture(ckpt.architecture), ckpt.streams, out);
      } else {
        print_shapes(inspect_arch.spec(inspect_classes), inspect_arch.streams(), out);
      }
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("deepwriter");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace deepwriter::cli
