#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mcseg/scenegen.hpp"
#include "mcseg/trainer.hpp"

namespace mcseg {

struct BenchVariant {
  std::string name;
  TrainConfig::Mode mode = TrainConfig::Mode::Adapt;
  FusionKind fusion = FusionKind::RgbOnly;
  TaskSet tasks = TaskSet::SegOnly;
  bool refine = false;
};

struct BenchConfig {
  DatasetConfig dataset;   // generated under <out>/dataset when data_dir is empty
  std::string data_dir;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  int epochs = 10;
  int iters_per_epoch = 500;
  int num_c_steps = 4;
  int batch_size = 1;
  int width = 16;
  double lr = 1e-3;
  double momentum = 0.9;
  double boundary_threshold = 0.5;
  bool track_dynamics = true;
  std::string eval_split = "target_test";
  std::vector<BenchVariant> variants;
};

BenchConfig bench_config_from_json_text(const std::string& text);
std::string bench_config_to_json_text(const BenchConfig& cfg);

struct BenchCell {
  bool ok = false;
  std::string error;
  int selected_epoch = 0;
  double pix_acc = 0, mean_acc = 0, fw_iou = 0, mean_iou = 0;  // percent, 1 decimal
  std::optional<double> ods;                                   // fraction
  std::string run_dir;
};

struct BenchTable {
  std::vector<BenchVariant> variants;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<BenchCell>> cells;  // [variant][seed]
  std::vector<BenchCell> medians;             // over the seeds that succeeded
  std::optional<double> sobel_ods;            // baseline when a triple variant runs
  std::string data_dir;
  std::string table_csv_path;
  std::string table_json_path;
};

// Trains and evaluates every variant with every shared seed, then emits
// table.csv and table.json under out_dir. A variant failure is recorded in
// its cell; the table is still produced.
BenchTable run_benchmark(const BenchConfig& cfg, const std::string& out_dir);

// The Table-1-shaped default variant list.
std::vector<BenchVariant> default_bench_variants(bool include_oracle);

}  // namespace mcseg
