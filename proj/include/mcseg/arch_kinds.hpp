#pragma once

#include <string>

#include "mcseg/common.hpp"

namespace mcseg {

// Fig-4-style architecture families: input fusion variants and multitask sets.
enum class FusionKind {
  RgbOnly,
  HhaOnly,
  Early,
  LateAdd,
  LateConcat,
  ScoreAdd,
  ScoreConcatConv,
  ScoreGate,
  FuseNet,
};

enum class TaskSet {
  SegOnly,
  Dual,    // segmentation + depth (HHA) regression
  Triple,  // + boundary detection
};

inline std::string to_string(FusionKind f) {
  switch (f) {
    case FusionKind::RgbOnly: return "rgb_only";
    case FusionKind::HhaOnly: return "hha_only";
    case FusionKind::Early: return "early";
    case FusionKind::LateAdd: return "late_add";
    case FusionKind::LateConcat: return "late_concat";
    case FusionKind::ScoreAdd: return "score_add";
    case FusionKind::ScoreConcatConv: return "score_concat_conv";
    case FusionKind::ScoreGate: return "score_gate";
    case FusionKind::FuseNet: return "fusenet";
  }
  throw ContractError("unknown fusion kind");
}

inline std::string to_string(TaskSet t) {
  switch (t) {
    case TaskSet::SegOnly: return "seg_only";
    case TaskSet::Dual: return "dual";
    case TaskSet::Triple: return "triple";
  }
  throw ContractError("unknown task set");
}

inline FusionKind fusion_from_string(const std::string& s) {
  if (s == "rgb_only") return FusionKind::RgbOnly;
  if (s == "hha_only") return FusionKind::HhaOnly;
  if (s == "early") return FusionKind::Early;
  if (s == "late_add") return FusionKind::LateAdd;
  if (s == "late_concat") return FusionKind::LateConcat;
  if (s == "score_add") return FusionKind::ScoreAdd;
  if (s == "score_concat_conv") return FusionKind::ScoreConcatConv;
  if (s == "score_gate") return FusionKind::ScoreGate;
  if (s == "fusenet") return FusionKind::FuseNet;
  throw ConfigError(cat("unknown fusion kind: \"", s, "\""));
}

inline TaskSet tasks_from_string(const std::string& s) {
  if (s == "seg_only") return TaskSet::SegOnly;
  if (s == "dual") return TaskSet::Dual;
  if (s == "triple") return TaskSet::Triple;
  throw ConfigError(cat("unknown task set: \"", s, "\""));
}

inline bool fusion_needs_rgb(FusionKind f) { return f != FusionKind::HhaOnly; }
inline bool fusion_needs_hha(FusionKind f) { return f != FusionKind::RgbOnly; }

}  // namespace mcseg
