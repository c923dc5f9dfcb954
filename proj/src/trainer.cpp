#include "mcseg/trainer.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mcseg/checkpoint.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mcseg {

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("train config: lr must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train config: momentum must be in [0,1)");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (iters_per_epoch < 1) throw ConfigError("train config: iters_per_epoch must be >= 1");
  if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  if (num_c_steps < 0) throw ConfigError("train config: num_c_steps must be >= 0");
  if (width < 2) throw ConfigError("train config: width must be >= 2");
  if (!(boundary_threshold > 0 && boundary_threshold < 1)) {
    throw ConfigError("train config: boundary_threshold must be in (0,1)");
  }
  if (tasks != TaskSet::SegOnly && fusion != FusionKind::RgbOnly) {
    throw ConfigError("train config: multitask variants use RGB input alone");
  }
}

std::string to_string(TrainConfig::Mode mode) {
  switch (mode) {
    case TrainConfig::Mode::Adapt: return "adapt";
    case TrainConfig::Mode::SourceOnly: return "source_only";
    case TrainConfig::Mode::Oracle: return "oracle";
  }
  throw ContractError("unknown train mode");
}

TrainConfig::Mode train_mode_from_string(const std::string& s) {
  if (s == "adapt") return TrainConfig::Mode::Adapt;
  if (s == "source_only") return TrainConfig::Mode::SourceOnly;
  if (s == "oracle") return TrainConfig::Mode::Oracle;
  throw ConfigError(cat("unknown train mode: \"", s, "\""));
}

TrainConfig train_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(cat("train config: ", e.what()));
  }
  TrainConfig cfg;
  try {
    if (j.contains("fusion")) cfg.fusion = fusion_from_string(j.at("fusion").get<std::string>());
    if (j.contains("tasks")) cfg.tasks = tasks_from_string(j.at("tasks").get<std::string>());
    if (j.contains("mode")) cfg.mode = train_mode_from_string(j.at("mode").get<std::string>());
    cfg.lr = j.value("lr", cfg.lr);
    cfg.momentum = j.value("momentum", cfg.momentum);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.iters_per_epoch = j.value("iters_per_epoch", cfg.iters_per_epoch);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.num_c_steps = j.value("num_c_steps", cfg.num_c_steps);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.width = j.value("width", cfg.width);
    cfg.boundary_threshold = j.value("boundary_threshold", cfg.boundary_threshold);
    cfg.adv_weight = j.value("adv_weight", cfg.adv_weight);
    cfg.track_dynamics = j.value("track_dynamics", cfg.track_dynamics);
    cfg.data_dir = j.value("data_dir", cfg.data_dir);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
  } catch (const json::exception& e) {
    throw ConfigError(cat("train config: ", e.what()));
  }
  cfg.validate();
  return cfg;
}

std::string train_config_to_json_text(const TrainConfig& cfg) {
  json j{{"fusion", to_string(cfg.fusion)},
         {"tasks", to_string(cfg.tasks)},
         {"mode", to_string(cfg.mode)},
         {"lr", cfg.lr},
         {"momentum", cfg.momentum},
         {"batch_size", cfg.batch_size},
         {"iters_per_epoch", cfg.iters_per_epoch},
         {"epochs", cfg.epochs},
         {"num_c_steps", cfg.num_c_steps},
         {"seed", cfg.seed},
         {"width", cfg.width},
         {"boundary_threshold", cfg.boundary_threshold},
         {"adv_weight", cfg.adv_weight},
         {"track_dynamics", cfg.track_dynamics},
         {"data_dir", cfg.data_dir},
         {"out_dir", cfg.out_dir}};
  return j.dump(2) + "\n";
}

struct Trainer::Batch {
  Tensor rgb;
  Tensor hha;
  Tensor hha_target;
  std::vector<const LabelMap*> labels;
  std::vector<const BoundaryMap*> boundaries;
};

namespace {

// Stacks [C,H,W] planes from samples into one [B,C,H,W] tensor.
Tensor stack_planar(const std::vector<const Tensor*>& parts) {
  const Tensor& first = *parts.front();
  Tensor out({static_cast<int>(parts.size()), first.dim(0), first.dim(1), first.dim(2)});
  const std::int64_t stride = first.numel();
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!parts[i]->same_shape(first)) throw ContractError("batch: inconsistent sample shapes");
    std::copy(parts[i]->data.begin(), parts[i]->data.end(),
              out.data.begin() + static_cast<std::int64_t>(i) * stride);
  }
  return out;
}

}  // namespace

Trainer::Trainer(const TrainConfig& cfg, DatasetReader& reader)
    : cfg_(cfg),
      reader_(reader),
      opt_generator_(static_cast<float>(cfg.lr), static_cast<float>(cfg.momentum)),
      opt_classifier_(static_cast<float>(cfg.lr), static_cast<float>(cfg.momentum)),
      opt_head_(static_cast<float>(cfg.lr), static_cast<float>(cfg.momentum)),
      opt_uncertainty_(static_cast<float>(cfg.lr), static_cast<float>(cfg.momentum)) {
  cfg_.validate();
  Rng init = Rng::derive(cfg.seed, "model-init");
  model_ = build_model({cfg.fusion, cfg.tasks, reader.manifest().num_classes, cfg.width}, init);
  groups_ = parameter_groups(model_);
}

Trainer::Batch Trainer::load_batch(const std::vector<int>& indices, bool with_labels,
                                   bool with_gt_boundaries, bool with_hha_target) {
  if (indices.empty()) throw ContractError("empty batch");
  unsigned fields = kFieldRgb;
  const bool need_hha_input = fusion_needs_hha(cfg_.fusion);
  if (need_hha_input || with_hha_target) fields |= kFieldHha;
  if (with_labels) fields |= kFieldLabels;
  if (with_gt_boundaries) fields |= kFieldBoundaries;

  Batch b;
  std::vector<const Tensor*> rgb, hha;
  for (int idx : indices) {
    const Sample& s = reader_.sample(idx, fields);
    rgb.push_back(&s.rgb);
    if (fields & kFieldHha) hha.push_back(&s.hha);
    if (with_labels) b.labels.push_back(&s.labels);
    if (with_gt_boundaries) b.boundaries.push_back(&s.boundaries);
  }
  b.rgb = stack_planar(rgb);
  if (need_hha_input) b.hha = stack_planar(hha);
  if (with_hha_target) b.hha_target = stack_planar(hha);
  return b;
}

namespace {

struct ForwardVars {
  Outputs out;
};

}  // namespace

StepLosses Trainer::step_a(const std::vector<int>& src, const std::vector<int>* tgt_for_depth) {
  const bool multitask = cfg_.tasks != TaskSet::SegOnly;
  if (tgt_for_depth != nullptr && !multitask) {
    throw ContractError("step_a: target depth term only exists for multitask variants");
  }
  Batch sb = load_batch(src, /*labels=*/true, /*bounds=*/cfg_.tasks == TaskSet::Triple,
                        /*hha_target=*/multitask);

  Tape tape;
  ParamBinding bound = bind_params(tape, model_);
  Var rgb = tape.constant(sb.rgb);
  std::optional<Var> hha;
  if (fusion_needs_hha(cfg_.fusion)) hha = tape.constant(sb.hha);
  Outputs out = forward(tape, model_, bound, rgb, hha);

  Var ce1 = softmax_cross_entropy(tape, out.logits1, sb.labels);
  Var ce2 = softmax_cross_entropy(tape, out.logits2, sb.labels);
  Var l_seg = add(tape, ce1, ce2);

  StepLosses res;
  Var loss = l_seg;
  if (multitask) {
    Var l2s = depth_mse(tape, *out.depth, tape.constant(sb.hha_target));
    std::optional<Var> l3;
    if (cfg_.tasks == TaskSet::Triple) {
      l3 = balanced_bce(tape, *out.boundary, sb.boundaries);
      res.boundary = tape.val(*l3).data[0];
    }
    std::optional<Var> l2t;
    if (tgt_for_depth != nullptr) {
      Batch tb = load_batch(*tgt_for_depth, false, false, /*hha_target=*/true);
      Outputs tout = forward(tape, model_, bound, tape.constant(tb.rgb), std::nullopt);
      l2t = depth_mse(tape, *tout.depth, tape.constant(tb.hha_target));
    }
    res.depth = tape.val(l2s).data[0];
    loss = multitask_total(tape, l_seg, l2s, l2t, l3, uncertainty_vars(model_, bound), cfg_.tasks);
  }
  res.seg = tape.val(l_seg).data[0];
  res.total = tape.val(loss).data[0];

  tape.backward(loss);
  auto apply = [&](SgdMomentum& opt, const std::vector<int>& group) {
    if (group.empty()) return;
    std::vector<Tensor*> ps;
    std::vector<const Tensor*> gs;
    for (int i : group) {
      ps.push_back(&model_.params[static_cast<std::size_t>(i)].value);
      gs.push_back(&tape.grad(bound.vars[static_cast<std::size_t>(i)]));
    }
    opt.step(ps, gs);
  };
  apply(opt_generator_, groups_.generator);
  apply(opt_classifier_, groups_.classifier);
  apply(opt_head_, groups_.head);
  apply(opt_uncertainty_, groups_.uncertainty);
  return res;
}

StepLosses Trainer::step_b(const std::vector<int>& src, const std::vector<int>& tgt) {
  Batch sb = load_batch(src, /*labels=*/true, false, false);
  Batch tb = load_batch(tgt, /*labels=*/false, false, false);

  std::vector<char> mask(model_.params.size(), 0);
  for (int i : groups_.classifier) mask[static_cast<std::size_t>(i)] = 1;

  Tape tape;
  ParamBinding bound = bind_params(tape, model_, &mask);

  std::optional<Var> shha, thha;
  if (fusion_needs_hha(cfg_.fusion)) {
    shha = tape.constant(sb.hha);
    thha = tape.constant(tb.hha);
  }
  Outputs sout = forward(tape, model_, bound, tape.constant(sb.rgb), shha);
  Outputs tout = forward(tape, model_, bound, tape.constant(tb.rgb), thha);

  Var l_seg = add(tape, softmax_cross_entropy(tape, sout.logits1, sb.labels),
                  softmax_cross_entropy(tape, sout.logits2, sb.labels));
  Var disc = discrepancy(tape, softmax_channel(tape, tout.logits1),
                         softmax_channel(tape, tout.logits2));
  Var loss = sub(tape, l_seg, mul_scalar(tape, disc, static_cast<float>(cfg_.adv_weight)));

  StepLosses res;
  res.seg = tape.val(l_seg).data[0];
  res.adv = tape.val(disc).data[0];
  res.total = tape.val(loss).data[0];

  tape.backward(loss);
  std::vector<Tensor*> ps;
  std::vector<const Tensor*> gs;
  for (int i : groups_.classifier) {
    ps.push_back(&model_.params[static_cast<std::size_t>(i)].value);
    gs.push_back(&tape.grad(bound.vars[static_cast<std::size_t>(i)]));
  }
  opt_classifier_.step(ps, gs);
  return res;
}

StepLosses Trainer::step_c_once(const std::vector<int>& tgt) {
  Batch tb = load_batch(tgt, false, false, false);

  std::vector<char> mask(model_.params.size(), 0);
  for (int i : groups_.generator) mask[static_cast<std::size_t>(i)] = 1;

  Tape tape;
  ParamBinding bound = bind_params(tape, model_, &mask);
  std::optional<Var> thha;
  if (fusion_needs_hha(cfg_.fusion)) thha = tape.constant(tb.hha);
  Outputs tout = forward(tape, model_, bound, tape.constant(tb.rgb), thha);
  Var disc = discrepancy(tape, softmax_channel(tape, tout.logits1),
                         softmax_channel(tape, tout.logits2));

  StepLosses res;
  res.adv = tape.val(disc).data[0];
  res.total = res.adv;

  tape.backward(disc);
  std::vector<Tensor*> ps;
  std::vector<const Tensor*> gs;
  for (int i : groups_.generator) {
    ps.push_back(&model_.params[static_cast<std::size_t>(i)].value);
    gs.push_back(&tape.grad(bound.vars[static_cast<std::size_t>(i)]));
  }
  opt_generator_.step(ps, gs);
  return res;
}

StepLosses Trainer::step_c(const std::vector<int>& tgt, int num_c_steps) {
  StepLosses res;
  for (int k = 0; k < num_c_steps; ++k) res = step_c_once(tgt);
  return res;
}

double Trainer::discrepancy_on(const std::vector<int>& tgt) {
  Batch tb = load_batch(tgt, false, false, false);
  std::vector<char> mask(model_.params.size(), 0);
  Tape tape;
  ParamBinding bound = bind_params(tape, model_, &mask);
  std::optional<Var> thha;
  if (fusion_needs_hha(cfg_.fusion)) thha = tape.constant(tb.hha);
  Outputs tout = forward(tape, model_, bound, tape.constant(tb.rgb), thha);
  Var disc = discrepancy(tape, softmax_channel(tape, tout.logits1),
                         softmax_channel(tape, tout.logits2));
  return tape.val(disc).data[0];
}

double Trainer::target_entropy(const std::vector<int>& indices) {
  if (indices.empty()) throw ContractError("target_entropy: empty index set");
  std::vector<char> mask(model_.params.size(), 0);
  double acc = 0;
  for (int idx : indices) {
    Tape tape;
    ParamBinding bound = bind_params(tape, model_, &mask);
    std::vector<int> one{idx};
    Batch tb = load_batch(one, false, false, false);
    std::optional<Var> thha;
    if (fusion_needs_hha(cfg_.fusion)) thha = tape.constant(tb.hha);
    Outputs out = forward(tape, model_, bound, tape.constant(tb.rgb), thha);
    Var probs = mul_scalar(tape, add(tape, softmax_channel(tape, out.logits1),
                                     softmax_channel(tape, out.logits2)), 0.5f);
    acc += mean_entropy(tape.val(probs));
  }
  return acc / static_cast<double>(indices.size());
}

namespace {

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<int> draw_batch(Rng& rng, const std::vector<int>& pool, int n) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    out.push_back(pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))]);
  }
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  if (cfg.data_dir.empty()) throw ConfigError("train: data_dir is required");
  DatasetReader reader(cfg.data_dir);
  return train(cfg, reader);
}

TrainResult train(const TrainConfig& cfg, DatasetReader& reader) {
  cfg.validate();
  if (cfg.out_dir.empty()) throw ConfigError("train: out_dir is required");

  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError(cat(cfg.out_dir, ": cannot create run directory: ", ec.message()));

  {
    std::ofstream cfg_out(fs::path(cfg.out_dir) / "config.json", std::ios::binary);
    if (!cfg_out) throw IoError(cat(cfg.out_dir, "/config.json: cannot write"));
    cfg_out << train_config_to_json_text(cfg);
  }

  Trainer trainer(cfg, reader);
  const std::vector<int> src_ids = reader.split_indices("source_train");
  const std::vector<int> tgt_ids = reader.split_indices("target_train");

  const bool uses_source = cfg.mode != TrainConfig::Mode::Oracle;
  const bool uses_target = cfg.mode != TrainConfig::Mode::SourceOnly;
  if (uses_source && src_ids.empty()) throw SemanticError("train: source_train split is empty");
  if (uses_target && tgt_ids.empty()) throw SemanticError("train: target_train split is empty");

  Rng sampler = Rng::derive(cfg.seed, "sampling");

  std::ofstream log(fs::path(cfg.out_dir) / "log.csv", std::ios::binary);
  if (!log) throw IoError(cat(cfg.out_dir, "/log.csv: cannot write"));
  log << "epoch,L_seg_src,L_adv_tgt,L_depth,L_boundary,target_entropy\n";

  const bool adapt = cfg.mode == TrainConfig::Mode::Adapt;
  const bool dynamics = cfg.track_dynamics && adapt;
  std::ofstream dyn;
  if (dynamics) {
    dyn.open(fs::path(cfg.out_dir) / "dynamics.csv", std::ios::binary);
    if (!dyn) throw IoError(cat(cfg.out_dir, "/dynamics.csv: cannot write"));
    dyn << "epoch,mean_delta_b,mean_delta_c\n";
  }

  const bool multitask = cfg.tasks != TaskSet::SegOnly;
  TrainResult result;
  result.run_dir = cfg.out_dir;
  result.log_path = (fs::path(cfg.out_dir) / "log.csv").generic_string();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double sum_seg = 0, sum_adv = 0, sum_depth = 0, sum_boundary = 0;
    double sum_db = 0, sum_dc = 0;

    for (int iter = 0; iter < cfg.iters_per_epoch; ++iter) {
      switch (cfg.mode) {
        case TrainConfig::Mode::Adapt: {
          const std::vector<int> src = draw_batch(sampler, src_ids, cfg.batch_size);
          const std::vector<int> tgt = draw_batch(sampler, tgt_ids, cfg.batch_size);
          const StepLosses a = trainer.step_a(src, multitask ? &tgt : nullptr);
          const StepLosses b = trainer.step_b(src, tgt);
          double post_b = 0;
          if (dynamics) {
            post_b = trainer.discrepancy_on(tgt);
            sum_db += post_b - b.adv;
          }
          trainer.step_c(tgt, cfg.num_c_steps);
          if (dynamics) {
            const double post_c = trainer.discrepancy_on(tgt);
            sum_dc += post_c - post_b;
          }
          sum_seg += a.seg;
          sum_adv += b.adv;
          sum_depth += a.depth;
          sum_boundary += a.boundary;
          break;
        }
        case TrainConfig::Mode::SourceOnly: {
          const std::vector<int> src = draw_batch(sampler, src_ids, cfg.batch_size);
          const StepLosses a = trainer.step_a(src, nullptr);
          sum_seg += a.seg;
          sum_depth += a.depth;
          sum_boundary += a.boundary;
          break;
        }
        case TrainConfig::Mode::Oracle: {
          const std::vector<int> tgt = draw_batch(sampler, tgt_ids, cfg.batch_size);
          const StepLosses a = trainer.step_a(tgt, nullptr);
          sum_seg += a.seg;
          sum_depth += a.depth;
          sum_boundary += a.boundary;
          break;
        }
      }
    }

    char name[64];
    std::snprintf(name, sizeof name, "ckpt_epoch%d.mcseg", epoch);
    const std::string ckpt_path = (fs::path(cfg.out_dir) / name).generic_string();
    save_checkpoint(trainer.model(), ckpt_path);
    result.checkpoints.push_back(ckpt_path);

    const double n = cfg.iters_per_epoch;
    log << epoch << "," << fmt6(sum_seg / n) << ","
        << (adapt ? fmt6(sum_adv / n) : std::string()) << ","
        << (multitask ? fmt6(sum_depth / n) : std::string()) << ","
        << (cfg.tasks == TaskSet::Triple ? fmt6(sum_boundary / n) : std::string()) << ",";
    if (uses_target) {
      log << fmt6(trainer.target_entropy(tgt_ids));
    }
    log << "\n";
    log.flush();

    if (dynamics) {
      dyn << epoch << "," << fmt6(sum_db / n) << "," << fmt6(sum_dc / n) << "\n";
      dyn.flush();
    }
  }

  result.epochs = cfg.epochs;
  return result;
}

int select_epoch(const std::string& run_dir) {
  const std::string path = (fs::path(run_dir) / "log.csv").generic_string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(cat(path, ": cannot open log"));
  std::string line;
  std::getline(in, line);  // header
  int best_epoch = -1, last_epoch = -1;
  double best_entropy = 0;
  bool has_entropy = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    while (cols.size() < 6) cols.emplace_back();
    const int epoch = std::stoi(cols[0]);
    last_epoch = epoch;
    if (!cols[5].empty()) {
      const double h = std::stod(cols[5]);
      if (!has_entropy || h < best_entropy) {  // strict <: ties keep the earliest
        has_entropy = true;
        best_entropy = h;
        best_epoch = epoch;
      }
    }
  }
  if (last_epoch < 0) throw SemanticError(cat(path, ": log has no epochs"));
  return has_entropy ? best_epoch : last_epoch;
}

}  // namespace mcseg
