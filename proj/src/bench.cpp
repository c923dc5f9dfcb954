#include "mcseg/bench.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mcseg/checkpoint.hpp"
#include "mcseg/eval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mcseg {

namespace {

std::string sanitize(const std::string& name) {
  std::string out;
  for (char c : name) {
    out += (std::isalnum(static_cast<unsigned char>(c)) != 0) ? c : '_';
  }
  return out;
}

std::string fmt1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

json variant_to_json(const BenchVariant& v) {
  return json{{"name", v.name},
              {"mode", to_string(v.mode)},
              {"fusion", to_string(v.fusion)},
              {"tasks", to_string(v.tasks)},
              {"refine", v.refine}};
}

BenchVariant variant_from_json(const json& j) {
  BenchVariant v;
  v.name = j.at("name").get<std::string>();
  if (j.contains("mode")) v.mode = train_mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("fusion")) v.fusion = fusion_from_string(j.at("fusion").get<std::string>());
  if (j.contains("tasks")) v.tasks = tasks_from_string(j.at("tasks").get<std::string>());
  v.refine = j.value("refine", false);
  return v;
}

json cell_to_json(const BenchCell& c) {
  json j{{"ok", c.ok}};
  if (!c.ok) {
    j["error"] = c.error;
    return j;
  }
  j["epoch"] = c.selected_epoch;
  j["pixAcc"] = c.pix_acc;
  j["mAcc"] = c.mean_acc;
  j["fwIoU"] = c.fw_iou;
  j["mIoU"] = c.mean_iou;
  if (c.ods.has_value()) j["ods"] = *c.ods;
  if (!c.run_dir.empty()) j["run_dir"] = c.run_dir;
  return j;
}

}  // namespace

std::vector<BenchVariant> default_bench_variants(bool include_oracle) {
  std::vector<BenchVariant> v;
  v.push_back({"SourceOnly(RGB)", TrainConfig::Mode::SourceOnly, FusionKind::RgbOnly,
               TaskSet::SegOnly, false});
  v.push_back({"Adapt(RGB)", TrainConfig::Mode::Adapt, FusionKind::RgbOnly, TaskSet::SegOnly,
               false});
  v.push_back({"Adapt(EarlyFusion)", TrainConfig::Mode::Adapt, FusionKind::Early,
               TaskSet::SegOnly, false});
  v.push_back({"Adapt(Multitask:Triple+Refine)", TrainConfig::Mode::Adapt, FusionKind::RgbOnly,
               TaskSet::Triple, true});
  if (include_oracle) {
    v.push_back({"Oracle(TargetOnly)", TrainConfig::Mode::Oracle, FusionKind::RgbOnly,
                 TaskSet::SegOnly, false});
  }
  return v;
}

BenchConfig bench_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(cat("benchmark config: ", e.what()));
  }
  BenchConfig cfg;
  try {
    if (j.contains("dataset")) {
      cfg.dataset = dataset_config_from_json_text(j.at("dataset").dump());
    } else {
      cfg.dataset = default_dataset_config();
    }
    cfg.data_dir = j.value("data_dir", cfg.data_dir);
    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.iters_per_epoch = j.value("iters_per_epoch", cfg.iters_per_epoch);
    cfg.num_c_steps = j.value("num_c_steps", cfg.num_c_steps);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.width = j.value("width", cfg.width);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.momentum = j.value("momentum", cfg.momentum);
    cfg.boundary_threshold = j.value("boundary_threshold", cfg.boundary_threshold);
    cfg.track_dynamics = j.value("track_dynamics", cfg.track_dynamics);
    cfg.eval_split = j.value("eval_split", cfg.eval_split);
    if (j.contains("variants")) {
      for (const json& vj : j.at("variants")) cfg.variants.push_back(variant_from_json(vj));
    }
    if (cfg.variants.empty() && j.value("include_default_variants", true)) {
      cfg.variants = default_bench_variants(j.value("include_oracle", false));
    }
  } catch (const json::exception& e) {
    throw ConfigError(cat("benchmark config: ", e.what()));
  }
  if (cfg.seeds.empty()) throw ConfigError("benchmark config: at least one seed required");
  if (cfg.variants.empty()) throw ConfigError("benchmark config: no variants");
  return cfg;
}

std::string bench_config_to_json_text(const BenchConfig& cfg) {
  json variants = json::array();
  for (const auto& v : cfg.variants) variants.push_back(variant_to_json(v));
  json j{{"dataset", json::parse(dataset_config_to_json_text(cfg.dataset))},
         {"data_dir", cfg.data_dir},
         {"seeds", cfg.seeds},
         {"epochs", cfg.epochs},
         {"iters_per_epoch", cfg.iters_per_epoch},
         {"num_c_steps", cfg.num_c_steps},
         {"batch_size", cfg.batch_size},
         {"width", cfg.width},
         {"lr", cfg.lr},
         {"momentum", cfg.momentum},
         {"boundary_threshold", cfg.boundary_threshold},
         {"track_dynamics", cfg.track_dynamics},
         {"eval_split", cfg.eval_split},
         {"variants", variants}};
  return j.dump(2) + "\n";
}

BenchTable run_benchmark(const BenchConfig& cfg, const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError(cat(out_dir, ": cannot create benchmark directory: ", ec.message()));

  BenchTable table;
  table.variants = cfg.variants;
  table.seeds = cfg.seeds;

  if (!cfg.data_dir.empty()) {
    table.data_dir = cfg.data_dir;
  } else {
    table.data_dir = (fs::path(out_dir) / "dataset").generic_string();
    if (!fs::exists(fs::path(table.data_dir) / "manifest.json")) {
      write_dataset(cfg.dataset, table.data_dir);
    }
  }

  DatasetReader reader(table.data_dir);

  table.cells.assign(cfg.variants.size(), {});
  for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi) {
    const BenchVariant& variant = cfg.variants[vi];
    for (std::uint64_t seed : cfg.seeds) {
      BenchCell cell;
      const std::string run_dir =
          (fs::path(out_dir) / "runs" / cat(sanitize(variant.name), "_seed", seed)).generic_string();
      cell.run_dir = run_dir;
      try {
        TrainConfig tc;
        tc.fusion = variant.fusion;
        tc.tasks = variant.tasks;
        tc.mode = variant.mode;
        tc.lr = cfg.lr;
        tc.momentum = cfg.momentum;
        tc.batch_size = cfg.batch_size;
        tc.iters_per_epoch = cfg.iters_per_epoch;
        tc.epochs = cfg.epochs;
        tc.num_c_steps = cfg.num_c_steps;
        tc.seed = seed;
        tc.width = cfg.width;
        tc.boundary_threshold = cfg.boundary_threshold;
        tc.track_dynamics = cfg.track_dynamics;
        tc.data_dir = table.data_dir;
        tc.out_dir = run_dir;

        train(tc, reader);
        const int epoch = select_epoch(run_dir);
        char name[64];
        std::snprintf(name, sizeof name, "ckpt_epoch%d.mcseg", epoch);
        const Model model = load_checkpoint((fs::path(run_dir) / name).generic_string());

        EvalOptions opts;
        opts.split = cfg.eval_split;
        opts.refine = variant.refine;
        opts.boundary_threshold = cfg.boundary_threshold;
        const EvalResult ev = evaluate_model(model, reader, opts, name, epoch);
        write_report(ev.report, (fs::path(run_dir) / "report.json").generic_string());

        cell.ok = true;
        cell.selected_epoch = epoch;
        cell.pix_acc = ev.report.pix_acc;
        cell.mean_acc = ev.report.mean_acc;
        cell.fw_iou = ev.report.fw_iou;
        cell.mean_iou = ev.report.mean_iou;
        if (ev.boundary.has_value()) cell.ods = ev.boundary->ods;
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
      }
      table.cells[vi].push_back(cell);
    }
  }

  const bool any_triple = std::any_of(cfg.variants.begin(), cfg.variants.end(),
                                      [](const BenchVariant& v) { return v.tasks == TaskSet::Triple; });
  if (any_triple) {
    table.sobel_ods = sobel_baseline_scores(reader, cfg.eval_split).ods;
  }

  // per-variant medians over successful seeds
  for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi) {
    BenchCell med;
    std::vector<double> pa, ma, fw, mi, od;
    for (const BenchCell& c : table.cells[vi]) {
      if (!c.ok) continue;
      pa.push_back(c.pix_acc);
      ma.push_back(c.mean_acc);
      fw.push_back(c.fw_iou);
      mi.push_back(c.mean_iou);
      if (c.ods.has_value()) od.push_back(*c.ods);
    }
    if (!pa.empty()) {
      med.ok = true;
      med.pix_acc = median_of(pa);
      med.mean_acc = median_of(ma);
      med.fw_iou = median_of(fw);
      med.mean_iou = median_of(mi);
      if (!od.empty()) med.ods = median_of(od);
    } else {
      med.error = "no successful seed";
    }
    table.medians.push_back(med);
  }

  // table.csv
  table.table_csv_path = (fs::path(out_dir) / "table.csv").generic_string();
  {
    std::ofstream csv(table.table_csv_path, std::ios::binary);
    if (!csv) throw IoError(cat(table.table_csv_path, ": cannot write"));
    csv << "variant,seed,pixAcc,mAcc,fwIoU,mIoU,ods,epoch,status\n";
    for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi) {
      for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
        const BenchCell& c = table.cells[vi][si];
        csv << cfg.variants[vi].name << "," << cfg.seeds[si] << ",";
        if (c.ok) {
          csv << fmt1(c.pix_acc) << "," << fmt1(c.mean_acc) << "," << fmt1(c.fw_iou) << ","
              << fmt1(c.mean_iou) << "," << (c.ods ? fmt4(*c.ods) : std::string()) << ","
              << c.selected_epoch << ",ok\n";
        } else {
          std::string err = c.error;
          std::replace(err.begin(), err.end(), ',', ';');
          std::replace(err.begin(), err.end(), '\n', ' ');
          csv << ",,,,,," << err << "\n";
        }
      }
      const BenchCell& m = table.medians[vi];
      csv << cfg.variants[vi].name << ",median,";
      if (m.ok) {
        csv << fmt1(m.pix_acc) << "," << fmt1(m.mean_acc) << "," << fmt1(m.fw_iou) << ","
            << fmt1(m.mean_iou) << "," << (m.ods ? fmt4(*m.ods) : std::string()) << ",,ok\n";
      } else {
        csv << ",,,,,," << m.error << "\n";
      }
    }
    if (table.sobel_ods.has_value()) {
      csv << "SobelBaseline,-,,,,," << fmt4(*table.sobel_ods) << ",,ok\n";
    }
  }

  // table.json
  table.table_json_path = (fs::path(out_dir) / "table.json").generic_string();
  {
    json variants = json::array();
    for (const auto& v : cfg.variants) variants.push_back(variant_to_json(v));
    json cells = json::array();
    for (const auto& row : table.cells) {
      json jrow = json::array();
      for (const auto& c : row) jrow.push_back(cell_to_json(c));
      cells.push_back(jrow);
    }
    json medians = json::array();
    for (const auto& m : table.medians) medians.push_back(cell_to_json(m));
    json j{{"seeds", cfg.seeds},
           {"eval_split", cfg.eval_split},
           {"variants", variants},
           {"cells", cells},
           {"medians", medians},
           {"data_dir", table.data_dir}};
    if (table.sobel_ods.has_value()) j["sobel_ods"] = *table.sobel_ods;
    std::ofstream out(table.table_json_path, std::ios::binary);
    if (!out) throw IoError(cat(table.table_json_path, ": cannot write"));
    out << j.dump(2) << "\n";
  }

  return table;
}

}  // namespace mcseg
