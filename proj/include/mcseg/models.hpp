#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mcseg/arch_kinds.hpp"
#include "mcseg/autodiff.hpp"
#include "mcseg/losses.hpp"
#include "mcseg/rng.hpp"

namespace mcseg {

struct ModelConfig {
  FusionKind fusion = FusionKind::RgbOnly;
  TaskSet tasks = TaskSet::SegOnly;
  int num_classes = 6;
  int width = 16;  // stage widths are (w, 2w, 4w)
};

struct Parameter {
  std::string name;
  Tensor value;
};

// Feature generator G plus classifier heads C1/C2 (and optional depth and
// boundary heads). Parameters are flat and name-addressed; the name prefix
// (gen./cls./head./uncert.) defines the optimizer grouping.
class Model {
 public:
  ModelConfig cfg;
  std::vector<Parameter> params;

  int find(const std::string& name) const;       // -1 when absent
  int require(const std::string& name) const;    // throws when absent
  bool has(const std::string& name) const { return find(name) >= 0; }
};

// Shapes are fixed by (fusion, tasks, K, width); values come from
// Kaiming-uniform fan-in draws off the given stream in declaration order.
Model build_model(const ModelConfig& cfg, Rng& rng);

struct ParamBinding {
  std::vector<Var> vars;  // index-aligned with Model::params
};

// Registers every parameter as a tape leaf. requires_grad_mask, when given,
// must align with Model::params; by default every parameter requires grad.
ParamBinding bind_params(Tape& tape, const Model& model,
                         const std::vector<char>* requires_grad_mask = nullptr);

enum class ForwardMode { Train, Eval };  // identical: no stochastic layers

struct Outputs {
  Var logits1;                  // [N,K,H,W]
  Var logits2;                  // [N,K,H,W]
  std::optional<Var> depth;     // [N,3,H,W] HHA regression
  std::optional<Var> boundary;  // [N,1,H,W] probabilities
};

// Named intermediate activations, recorded only when a trace is requested.
struct ForwardTrace {
  std::vector<std::pair<std::string, Var>> taps;
  Var find(const std::string& name) const;
};

Outputs forward(Tape& tape, const Model& model, const ParamBinding& bound, Var rgb,
                std::optional<Var> hha, ForwardMode mode = ForwardMode::Train,
                ForwardTrace* trace = nullptr);

// Uncertainty vars for the multitask loss, bound on the same tape.
UncertaintyVars<float> uncertainty_vars(const Model& model, const ParamBinding& bound);

struct ParamGroups {
  std::vector<int> generator;
  std::vector<int> classifier;
  std::vector<int> head;
  std::vector<int> uncertainty;
};

// Disjoint, exhaustive partition by name prefix.
ParamGroups parameter_groups(const Model& model);

// 64-bit FNV-1a over a parameter subset; used to assert update discipline.
std::uint64_t hash_params(const Model& model, const std::vector<int>& indices);

}  // namespace mcseg
