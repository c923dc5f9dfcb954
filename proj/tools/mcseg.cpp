// mcseg: dataset generation, adversarial domain-adaptation training,
// evaluation, refinement and qualitative rendering in one binary.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mcseg/bench.hpp"
#include "mcseg/checkpoint.hpp"
#include "mcseg/eval.hpp"
#include "mcseg/image_io.hpp"
#include "mcseg/refine.hpp"
#include "mcseg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mcseg;

namespace {

constexpr const char* kVersion = "mcseg-0.1.0";

// exit codes: 0 success, 2 usage/config, 3 I/O, 4 semantic
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitSemantic = 4;

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(cat(path, ": cannot open"));
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Inventory plus timestamps for reproducibility bookkeeping; not part of the
// deterministic artifact set.
void write_run_manifest(const std::string& out_dir, const json& resolved_config,
                        std::uint64_t seed) {
  json files = json::array();
  std::vector<std::string> paths;
  for (const auto& entry : fs::recursive_directory_iterator(out_dir)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().filename() == "run_manifest.json") continue;
    paths.push_back(fs::relative(entry.path(), out_dir).generic_string());
  }
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) {
    files.push_back(json{{"path", p}, {"bytes", fs::file_size(fs::path(out_dir) / p)}});
  }
  const auto now = std::chrono::system_clock::now();
  json j{{"version", kVersion},
         {"seed", seed},
         {"config", resolved_config},
         {"created_unix_ms",
          std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count()},
         {"files", files}};
  std::ofstream out(fs::path(out_dir) / "run_manifest.json", std::ios::binary);
  out << j.dump(2) << "\n";
}

int cmd_datagen(const std::string& config_path, const std::string& out_dir) {
  DatasetConfig cfg = config_path.empty()
                          ? default_dataset_config()
                          : dataset_config_from_json_text(read_text_file(config_path));
  const WriteResult res = write_dataset(cfg, out_dir);
  write_run_manifest(out_dir, json::parse(dataset_config_to_json_text(cfg)), cfg.seed);
  std::cout << "wrote " << res.samples_written << " samples, manifest at " << res.manifest_path
            << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, bool source_only) {
  TrainConfig cfg = config_path.empty() ? TrainConfig{}
                                        : train_config_from_json_text(read_text_file(config_path));
  if (!data_dir.empty()) cfg.data_dir = data_dir;
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  if (source_only) cfg.mode = TrainConfig::Mode::SourceOnly;
  if (cfg.data_dir.empty()) throw ConfigError("train: --data or config data_dir is required");
  if (cfg.out_dir.empty()) throw ConfigError("train: --out or config out_dir is required");
  cfg.validate();

  const TrainResult res = train(cfg);
  write_run_manifest(cfg.out_dir, json::parse(train_config_to_json_text(cfg)), cfg.seed);
  std::cout << "trained " << res.epochs << " epochs, run directory " << res.run_dir << "\n";
  return 0;
}

struct LoadedModel {
  Model model;
  std::string checkpoint_name;
  int epoch = 0;
};

LoadedModel load_for_eval(const std::string& run_dir, const std::string& checkpoint) {
  LoadedModel lm;
  if (!checkpoint.empty()) {
    lm.model = load_checkpoint(checkpoint);
    lm.checkpoint_name = fs::path(checkpoint).filename().string();
    // recover the epoch from the canonical name when possible
    int epoch = 0;
    if (std::sscanf(lm.checkpoint_name.c_str(), "ckpt_epoch%d.mcseg", &epoch) == 1) {
      lm.epoch = epoch;
    }
    return lm;
  }
  const int epoch = select_epoch(run_dir);
  char name[64];
  std::snprintf(name, sizeof name, "ckpt_epoch%d.mcseg", epoch);
  lm.model = load_checkpoint((fs::path(run_dir) / name).generic_string());
  lm.checkpoint_name = name;
  lm.epoch = epoch;
  return lm;
}

int cmd_eval(const std::string& run_dir, const std::string& checkpoint,
             const std::string& data_dir, const std::string& split, bool refine,
             double boundary_threshold, const std::string& report_path) {
  if (run_dir.empty() == checkpoint.empty()) {
    throw ConfigError("eval: exactly one of --run / --checkpoint is required");
  }
  const LoadedModel lm = load_for_eval(run_dir, checkpoint);
  DatasetReader reader(data_dir);
  EvalOptions opts;
  opts.split = split;
  opts.refine = refine;
  opts.boundary_threshold = boundary_threshold;
  const EvalResult res = evaluate_model(lm.model, reader, opts, lm.checkpoint_name, lm.epoch);
  write_report(res.report, report_path);
  std::cout << "report " << report_path << ": pixAcc " << res.report.pix_acc << " mAcc "
            << res.report.mean_acc << " fwIoU " << res.report.fw_iou << " mIoU "
            << res.report.mean_iou << "\n";
  return 0;
}

ImageU8 palette_panel(const LabelMap& labels) {
  ImageU8 img;
  img.height = labels.height;
  img.width = labels.width;
  img.channels = 3;
  img.data.resize(static_cast<std::size_t>(img.height) * img.width * 3);
  for (int r = 0; r < labels.height; ++r)
    for (int c = 0; c < labels.width; ++c) {
      double cr = 0, cg = 0, cb = 0;
      const std::uint8_t v = labels.at(r, c);
      if (v != LabelMap::kIgnore) base_palette_color(v, &cr, &cg, &cb);
      const std::size_t px = (static_cast<std::size_t>(r) * labels.width + c) * 3;
      img.data[px] = static_cast<std::uint8_t>(std::lround(cr * 255));
      img.data[px + 1] = static_cast<std::uint8_t>(std::lround(cg * 255));
      img.data[px + 2] = static_cast<std::uint8_t>(std::lround(cb * 255));
    }
  return img;
}

ImageU8 rgb_panel(const Tensor& rgb) {
  const int H = rgb.dim(1), W = rgb.dim(2);
  ImageU8 img;
  img.height = H;
  img.width = W;
  img.channels = 3;
  img.data.resize(static_cast<std::size_t>(H) * W * 3);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        const float v = rgb.data[static_cast<std::size_t>(ch) * H * W + static_cast<std::size_t>(r) * W + c];
        img.data[(static_cast<std::size_t>(r) * W + c) * 3 + static_cast<std::size_t>(ch)] =
            static_cast<std::uint8_t>(std::lround(std::min(std::max(v, 0.f), 1.f) * 255));
      }
  return img;
}

int cmd_render(const std::string& run_dir, const std::string& data_dir, const std::string& ids_csv,
               const std::string& out_dir) {
  const LoadedModel lm = load_for_eval(run_dir, "");
  DatasetReader reader(data_dir);

  std::vector<std::string> ids;
  std::string cur;
  for (char c : ids_csv) {
    if (c == ',') {
      if (!cur.empty()) ids.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) ids.push_back(cur);
  if (ids.empty()) throw ConfigError("render: --ids must list at least one sample id");

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError(cat(out_dir, ": cannot create output directory"));

  for (const std::string& id : ids) {
    int index = -1;
    for (std::size_t i = 0; i < reader.manifest().samples.size(); ++i) {
      if (reader.manifest().samples[i].id == id) {
        index = static_cast<int>(i);
        break;
      }
    }
    if (index < 0) throw ConfigError(cat("render: unknown sample id \"", id, "\""));

    unsigned fields = kFieldRgb | kFieldLabels;
    if (fusion_needs_hha(lm.model.cfg.fusion)) fields |= kFieldHha;
    const Sample& s = reader.sample(index, fields);

    write_ppm((fs::path(out_dir) / (id + "_input.ppm")).generic_string(), rgb_panel(s.rgb));
    const LabelMap pred = predict_labels(lm.model, s);
    write_ppm((fs::path(out_dir) / (id + "_pred.ppm")).generic_string(), palette_panel(pred));
    write_ppm((fs::path(out_dir) / (id + "_gt.ppm")).generic_string(), palette_panel(s.labels));

    if (lm.model.cfg.tasks == TaskSet::Triple) {
      Tape tape;
      const std::vector<char> frozen(lm.model.params.size(), 0);
      ParamBinding bound = bind_params(tape, lm.model, &frozen);
      Outputs out = forward(tape, lm.model, bound, tape.constant(as_batch(s.rgb)), std::nullopt,
                            ForwardMode::Eval);
      const Tensor& b = tape.val(*out.boundary);
      ImageU8 bimg;
      bimg.height = b.dim(2);
      bimg.width = b.dim(3);
      bimg.channels = 1;
      bimg.data.resize(static_cast<std::size_t>(bimg.height) * bimg.width);
      for (std::size_t i = 0; i < bimg.data.size(); ++i) {
        bimg.data[i] = static_cast<std::uint8_t>(std::lround(b.data[i] * 255.f));
      }
      write_pgm8((fs::path(out_dir) / (id + "_boundary.pgm")).generic_string(), bimg);
    }
  }
  std::cout << "rendered " << ids.size() << " sample(s) into " << out_dir << "\n";
  return 0;
}

int cmd_benchmark(const std::string& config_path, const std::string& out_dir) {
  BenchConfig cfg = config_path.empty()
                        ? bench_config_from_json_text("{}")
                        : bench_config_from_json_text(read_text_file(config_path));
  const BenchTable table = run_benchmark(cfg, out_dir);
  write_run_manifest(out_dir, json::parse(bench_config_to_json_text(cfg)),
                     cfg.seeds.empty() ? 0 : cfg.seeds[0]);
  std::cout << "benchmark table at " << table.table_csv_path << "\n";
  for (std::size_t vi = 0; vi < table.variants.size(); ++vi) {
    const BenchCell& m = table.medians[vi];
    if (m.ok) {
      std::printf("%-32s median pixAcc %5.1f mAcc %5.1f fwIoU %5.1f mIoU %5.1f\n",
                  table.variants[vi].name.c_str(), m.pix_acc, m.mean_acc, m.fw_iou, m.mean_iou);
    } else {
      std::printf("%-32s FAILED: %s\n", table.variants[vi].name.c_str(), m.error.c_str());
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multichannel semantic segmentation with unsupervised domain adaptation"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, run_dir, checkpoint, report_path, ids;
  std::string split = "target_test";
  bool source_only = false, refine = false;
  double boundary_threshold = 0.5;

  CLI::App* datagen = app.add_subcommand("datagen", "generate the paired-domain toy dataset");
  datagen->add_option("--config", config_path, "dataset config JSON");
  datagen->add_option("--out", out_dir, "output dataset directory")->required();

  CLI::App* train_cmd = app.add_subcommand("train", "run adversarial (or baseline) training");
  train_cmd->add_option("--config", config_path, "train config JSON");
  train_cmd->add_option("--data", data_dir, "dataset directory");
  train_cmd->add_option("--out", out_dir, "run directory");
  train_cmd->add_flag("--source-only", source_only, "skip the adversarial steps B and C");

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a run or checkpoint");
  eval_cmd->add_option("--run", run_dir, "run directory (entropy-selected epoch)");
  eval_cmd->add_option("--checkpoint", checkpoint, "explicit checkpoint path");
  eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
  eval_cmd->add_option("--split", split, "dataset split (default target_test)");
  eval_cmd->add_flag("--refine", refine, "boundary-voting refinement (triple models)");
  eval_cmd->add_option("--boundary-threshold", boundary_threshold, "refinement threshold");
  eval_cmd->add_option("--report", report_path, "output report.json path")->required();

  CLI::App* render_cmd = app.add_subcommand("render", "render qualitative panels");
  render_cmd->add_option("--run", run_dir, "run directory")->required();
  render_cmd->add_option("--data", data_dir, "dataset directory")->required();
  render_cmd->add_option("--ids", ids, "comma-separated sample ids")->required();
  render_cmd->add_option("--out", out_dir, "output directory")->required();

  CLI::App* bench_cmd = app.add_subcommand("benchmark", "train and evaluate a variant matrix");
  bench_cmd->add_option("--config", config_path, "benchmark config JSON");
  bench_cmd->add_option("--out", out_dir, "benchmark output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (datagen->parsed()) return cmd_datagen(config_path, out_dir);
    if (train_cmd->parsed()) return cmd_train(config_path, data_dir, out_dir, source_only);
    if (eval_cmd->parsed()) {
      return cmd_eval(run_dir, checkpoint, data_dir, split, refine, boundary_threshold,
                      report_path);
    }
    if (render_cmd->parsed()) return cmd_render(run_dir, data_dir, ids, out_dir);
    if (bench_cmd->parsed()) return cmd_benchmark(config_path, out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ContractError& e) {
    std::cerr << "invalid request: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SemanticError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitSemantic;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return 0;
}
