#pragma once

#include <string>
#include <vector>

#include "mcseg/dataset.hpp"
#include "mcseg/models.hpp"
#include "mcseg/optim.hpp"

namespace mcseg {

struct TrainConfig {
  enum class Mode { Adapt, SourceOnly, Oracle };

  FusionKind fusion = FusionKind::RgbOnly;
  TaskSet tasks = TaskSet::SegOnly;
  Mode mode = Mode::Adapt;
  double lr = 1e-3;
  double momentum = 0.9;
  int batch_size = 1;
  int iters_per_epoch = 500;  // desk-scale analogue of 5000-iteration epochs
  int epochs = 10;
  int num_c_steps = 4;
  std::uint64_t seed = 1;
  int width = 16;
  double boundary_threshold = 0.5;  // refinement eval default
  double adv_weight = 1.0;          // diagnostic knob; 0 disables the adversarial term
  bool track_dynamics = true;       // per-step discrepancy probes -> dynamics.csv
  std::string data_dir;
  std::string out_dir;

  void validate() const;
};

std::string to_string(TrainConfig::Mode mode);
TrainConfig::Mode train_mode_from_string(const std::string& s);
TrainConfig train_config_from_json_text(const std::string& text);
std::string train_config_to_json_text(const TrainConfig& cfg);

struct StepLosses {
  double seg = 0;       // source CE over both classifiers
  double adv = 0;       // discrepancy on the target batch
  double depth = 0;     // source depth (HHA) regression
  double boundary = 0;  // source class-balanced boundary loss
  double total = 0;
};

// Holds the model, one optimizer state per parameter group, and the three
// adversarial steps. Steps B and C update disjoint groups with the others
// held fixed.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, DatasetReader& reader);

  // Step A: minimize the source segmentation loss (or the uncertainty-
  // weighted multitask total) over G, C1, C2, heads and the s_i.
  // tgt_for_depth supplies the unlabeled-target depth term of the multitask
  // total; it must be null for seg_only and for source-only/oracle modes.
  StepLosses step_a(const std::vector<int>& src,
                    const std::vector<int>* tgt_for_depth = nullptr);

  // Step B: minimize L_seg(src) - adv_weight * L_adv(tgt) over C1/C2 only.
  StepLosses step_b(const std::vector<int>& src, const std::vector<int>& tgt);

  // Step C: num_c_steps generator-only steps minimizing L_adv(tgt).
  StepLosses step_c(const std::vector<int>& tgt, int num_c_steps);

  // Gradient-free probe of the current classifier disagreement.
  double discrepancy_on(const std::vector<int>& tgt);

  // Mean prediction entropy over a set of unlabeled samples.
  double target_entropy(const std::vector<int>& indices);

  Model& model() { return model_; }
  const Model& model() const { return model_; }
  const TrainConfig& config() const { return cfg_; }
  const ParamGroups& groups() const { return groups_; }

 private:
  struct Batch;
  Batch load_batch(const std::vector<int>& indices, bool with_labels, bool with_gt_boundaries,
                   bool with_hha_target);
  StepLosses step_c_once(const std::vector<int>& tgt);

  TrainConfig cfg_;
  DatasetReader& reader_;
  Model model_;
  ParamGroups groups_;
  SgdMomentum opt_generator_;
  SgdMomentum opt_classifier_;
  SgdMomentum opt_head_;
  SgdMomentum opt_uncertainty_;
};

struct TrainResult {
  std::string run_dir;
  int epochs = 0;
  std::vector<std::string> checkpoints;  // one per epoch, in order
  std::string log_path;
};

TrainResult train(const TrainConfig& cfg);
TrainResult train(const TrainConfig& cfg, DatasetReader& reader);

// argmin of target mean entropy over logged epochs (1-based; ties earliest).
// Runs without entropy values (source-only) select the last epoch.
int select_epoch(const std::string& run_dir);

}  // namespace mcseg
