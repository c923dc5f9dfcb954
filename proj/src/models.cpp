#include "mcseg/models.hpp"

#include <cmath>

namespace mcseg {

namespace {

Tensor kaiming_conv(Rng& rng, int cout, int cin, int kh, int kw) {
  Tensor w({cout, cin, kh, kw});
  const double bound = std::sqrt(6.0 / (static_cast<double>(cin) * kh * kw));
  for (auto& v : w.data) v = static_cast<float>(rng.uniform(-bound, bound));
  return w;
}

struct Builder {
  Rng& rng;
  std::vector<Parameter>& params;

  void conv(const std::string& name, int cout, int cin, int k) {
    params.push_back({name + ".w", kaiming_conv(rng, cout, cin, k, k)});
    params.push_back({name + ".b", Tensor({cout}, 0.f)});
  }

  // one backbone stage: stride-2 conv then stride-1 conv, both 3x3 + relu
  void stage(const std::string& prefix, int cin, int cout) {
    conv(prefix + ".c1", cout, cin, 3);
    conv(prefix + ".c2", cout, cout, 3);
  }

  void encoder(const std::string& prefix, int cin, int w) {
    stage(prefix + ".s1", cin, w);
    stage(prefix + ".s2", w, 2 * w);
    stage(prefix + ".s3", 2 * w, 4 * w);
  }

  // classifier-style head: two 3x3 convs narrowing to w, 1x1 to `cout`
  void head(const std::string& prefix, int cin, int w, int cout) {
    conv(prefix + ".conv1", 2 * w, cin, 3);
    conv(prefix + ".conv2", w, 2 * w, 3);
    conv(prefix + ".conv3", cout, w, 1);
  }
};

bool two_encoder_fusion(FusionKind f) {
  switch (f) {
    case FusionKind::LateAdd:
    case FusionKind::LateConcat:
    case FusionKind::ScoreAdd:
    case FusionKind::ScoreConcatConv:
    case FusionKind::ScoreGate:
    case FusionKind::FuseNet:
      return true;
    default:
      return false;
  }
}

bool score_fusion(FusionKind f) {
  return f == FusionKind::ScoreAdd || f == FusionKind::ScoreConcatConv ||
         f == FusionKind::ScoreGate;
}

}  // namespace

int Model::find(const std::string& name) const {
  for (int i = 0; i < static_cast<int>(params.size()); ++i) {
    if (params[static_cast<std::size_t>(i)].name == name) return i;
  }
  return -1;
}

int Model::require(const std::string& name) const {
  const int i = find(name);
  if (i < 0) throw ContractError(cat("model has no parameter \"", name, "\""));
  return i;
}

Model build_model(const ModelConfig& cfg, Rng& rng) {
  if (cfg.num_classes < 2) throw ContractError("build_model: need at least 2 classes");
  if (cfg.width < 2) throw ContractError("build_model: width must be >= 2");
  if (cfg.tasks != TaskSet::SegOnly && cfg.fusion != FusionKind::RgbOnly) {
    throw ContractError(cat("build_model: multitask variants use RGB input alone; fusion \"",
                            to_string(cfg.fusion), "\" with tasks \"", to_string(cfg.tasks),
                            "\" is invalid"));
  }

  Model m;
  m.cfg = cfg;
  Builder b{rng, m.params};
  const int w = cfg.width;
  const int K = cfg.num_classes;

  switch (cfg.fusion) {
    case FusionKind::RgbOnly:
    case FusionKind::HhaOnly:
      b.encoder("gen.main", 3, w);
      break;
    case FusionKind::Early:
      b.encoder("gen.main", 6, w);
      break;
    default:
      b.encoder("gen.rgb", 3, w);
      b.encoder("gen.hha", 3, w);
      break;
  }

  const int feat_ch = cfg.fusion == FusionKind::LateConcat ? 8 * w : 4 * w;
  if (score_fusion(cfg.fusion)) {
    // four classifiers: one per (classifier index, modality)
    b.head("cls.c1.rgb", 4 * w, w, K);
    b.head("cls.c1.hha", 4 * w, w, K);
    b.head("cls.c2.rgb", 4 * w, w, K);
    b.head("cls.c2.hha", 4 * w, w, K);
    if (cfg.fusion == FusionKind::ScoreConcatConv) {
      b.conv("cls.fuse", K, 2 * K, 1);
    } else if (cfg.fusion == FusionKind::ScoreGate) {
      b.conv("cls.gate", K, 2 * K, 1);
    }
  } else {
    b.head("cls.c1", feat_ch, w, K);
    b.head("cls.c2", feat_ch, w, K);
  }

  if (cfg.tasks != TaskSet::SegOnly) {
    b.head("head.depth", 4 * w, w, 3);
    if (cfg.tasks == TaskSet::Triple) {
      b.conv("head.boundary.tap1", 1, w, 1);
      b.conv("head.boundary.tap2", 1, 2 * w, 1);
      b.conv("head.boundary.tap3", 1, 4 * w, 1);
    }
    m.params.push_back({"uncert.s1", Tensor({1}, 0.f)});
    m.params.push_back({"uncert.s2", Tensor({1}, 0.f)});
    if (cfg.tasks == TaskSet::Triple) {
      m.params.push_back({"uncert.s3", Tensor({1}, 0.f)});
    }
  }
  return m;
}

ParamBinding bind_params(Tape& tape, const Model& model,
                         const std::vector<char>* requires_grad_mask) {
  if (requires_grad_mask != nullptr && requires_grad_mask->size() != model.params.size()) {
    throw ContractError("bind_params: mask size does not match parameter count");
  }
  ParamBinding bound;
  bound.vars.reserve(model.params.size());
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const bool rg = requires_grad_mask == nullptr || (*requires_grad_mask)[i] != 0;
    bound.vars.push_back(tape.leaf(model.params[i].value, rg));
  }
  return bound;
}

Var ForwardTrace::find(const std::string& name) const {
  for (const auto& [n, v] : taps) {
    if (n == name) return v;
  }
  throw ContractError(cat("forward trace has no tap \"", name, "\""));
}

namespace {

struct Ctx {
  Tape& tape;
  const Model& model;
  const ParamBinding& bound;
  ForwardTrace* trace;

  Var p(const std::string& name) const {
    return bound.vars[static_cast<std::size_t>(model.require(name))];
  }
  void tap(const std::string& name, Var v) const {
    if (trace != nullptr) trace->taps.emplace_back(name, v);
  }
};

Var conv_block(const Ctx& ctx, const std::string& name, Var x, int stride, int pad) {
  return conv2d(ctx.tape, x, ctx.p(name + ".w"), ctx.p(name + ".b"), stride, pad);
}

struct EncoderOut {
  Var s1, s2, s3;  // 1/2, 1/4, 1/8 resolution
};

EncoderOut run_encoder(const Ctx& ctx, const std::string& prefix, Var x) {
  Tape& tp = ctx.tape;
  Var s1 = relu(tp, conv_block(ctx, prefix + ".s1.c2",
                               relu(tp, conv_block(ctx, prefix + ".s1.c1", x, 2, 1)), 1, 1));
  Var s2 = relu(tp, conv_block(ctx, prefix + ".s2.c2",
                               relu(tp, conv_block(ctx, prefix + ".s2.c1", s1, 2, 1)), 1, 1));
  Var s3 = relu(tp, conv_block(ctx, prefix + ".s3.c2",
                               relu(tp, conv_block(ctx, prefix + ".s3.c1", s2, 2, 1)), 1, 1));
  ctx.tap(prefix + ".s1.out", s1);
  ctx.tap(prefix + ".s2.out", s2);
  ctx.tap(prefix + ".s3.out", s3);
  return {s1, s2, s3};
}

// FuseNet-style: the HHA stream runs its own stages; its block outputs are
// added into the RGB stream at each stage end.
EncoderOut run_fusenet_encoder(const Ctx& ctx, Var rgb, Var hha) {
  Tape& tp = ctx.tape;
  Var h1 = relu(tp, conv_block(ctx, "gen.hha.s1.c2",
                               relu(tp, conv_block(ctx, "gen.hha.s1.c1", hha, 2, 1)), 1, 1));
  Var r1 = add(tp, relu(tp, conv_block(ctx, "gen.rgb.s1.c2",
                                       relu(tp, conv_block(ctx, "gen.rgb.s1.c1", rgb, 2, 1)), 1, 1)),
               h1);
  Var h2 = relu(tp, conv_block(ctx, "gen.hha.s2.c2",
                               relu(tp, conv_block(ctx, "gen.hha.s2.c1", h1, 2, 1)), 1, 1));
  Var r2 = add(tp, relu(tp, conv_block(ctx, "gen.rgb.s2.c2",
                                       relu(tp, conv_block(ctx, "gen.rgb.s2.c1", r1, 2, 1)), 1, 1)),
               h2);
  Var h3 = relu(tp, conv_block(ctx, "gen.hha.s3.c2",
                               relu(tp, conv_block(ctx, "gen.hha.s3.c1", h2, 2, 1)), 1, 1));
  Var r3 = add(tp, relu(tp, conv_block(ctx, "gen.rgb.s3.c2",
                                       relu(tp, conv_block(ctx, "gen.rgb.s3.c1", r2, 2, 1)), 1, 1)),
               h3);
  ctx.tap("gen.fused.s1.out", r1);
  ctx.tap("gen.fused.s2.out", r2);
  ctx.tap("gen.fused.s3.out", r3);
  return {r1, r2, r3};
}

// Three convs at 1/8 resolution, then the x8 bilinear enlargement.
Var run_head(const Ctx& ctx, const std::string& prefix, Var feat) {
  Tape& tp = ctx.tape;
  Var h = relu(tp, conv_block(ctx, prefix + ".conv1", feat, 1, 1));
  h = relu(tp, conv_block(ctx, prefix + ".conv2", h, 1, 1));
  h = conv_block(ctx, prefix + ".conv3", h, 1, 0);
  return bilinear_upsample(tp, h, 8);
}

}  // namespace

Outputs forward(Tape& tape, const Model& model, const ParamBinding& bound, Var rgb,
                std::optional<Var> hha, ForwardMode /*mode: no stochastic layers*/,
                ForwardTrace* trace) {
  const ModelConfig& cfg = model.cfg;
  if (bound.vars.size() != model.params.size()) {
    throw ContractError("forward: binding does not match the model");
  }
  if (fusion_needs_hha(cfg.fusion) && !hha.has_value()) {
    throw ContractError(cat("forward: fusion \"", to_string(cfg.fusion), "\" needs the HHA modality"));
  }
  const Ctx ctx{tape, model, bound, trace};

  Outputs out;
  EncoderOut feat;

  switch (cfg.fusion) {
    case FusionKind::RgbOnly:
      feat = run_encoder(ctx, "gen.main", rgb);
      break;
    case FusionKind::HhaOnly:
      feat = run_encoder(ctx, "gen.main", *hha);
      break;
    case FusionKind::Early:
      feat = run_encoder(ctx, "gen.main", concat_channels(tape, rgb, *hha));
      break;
    case FusionKind::FuseNet:
      feat = run_fusenet_encoder(ctx, rgb, *hha);
      break;
    case FusionKind::LateAdd:
    case FusionKind::LateConcat: {
      EncoderOut fr = run_encoder(ctx, "gen.rgb", rgb);
      EncoderOut fh = run_encoder(ctx, "gen.hha", *hha);
      feat = fr;
      feat.s3 = cfg.fusion == FusionKind::LateAdd ? add(tape, fr.s3, fh.s3)
                                                  : concat_channels(tape, fr.s3, fh.s3);
      ctx.tap("gen.fused.s3.out", feat.s3);
      break;
    }
    case FusionKind::ScoreAdd:
    case FusionKind::ScoreConcatConv:
    case FusionKind::ScoreGate: {
      EncoderOut fr = run_encoder(ctx, "gen.rgb", rgb);
      EncoderOut fh = run_encoder(ctx, "gen.hha", *hha);
      auto fuse_scores = [&](Var s_rgb, Var s_hha) -> Var {
        switch (cfg.fusion) {
          case FusionKind::ScoreAdd:
            return add(tape, s_rgb, s_hha);
          case FusionKind::ScoreConcatConv:
            return conv_block(ctx, "cls.fuse", concat_channels(tape, s_rgb, s_hha), 1, 0);
          default: {  // gate: convex per-pixel blend
            Var g = sigmoid(tape, conv_block(ctx, "cls.gate",
                                             concat_channels(tape, s_rgb, s_hha), 1, 0));
            Var ones = tape.constant(TensorT<float>(tape.val(g).shape, 1.f));
            return add(tape, mul(tape, g, s_rgb), mul(tape, sub(tape, ones, g), s_hha));
          }
        }
      };
      out.logits1 = fuse_scores(run_head(ctx, "cls.c1.rgb", fr.s3), run_head(ctx, "cls.c1.hha", fh.s3));
      out.logits2 = fuse_scores(run_head(ctx, "cls.c2.rgb", fr.s3), run_head(ctx, "cls.c2.hha", fh.s3));
      ctx.tap("cls.c1.fused", out.logits1);
      ctx.tap("cls.c2.fused", out.logits2);
      return out;
    }
  }

  out.logits1 = run_head(ctx, "cls.c1", feat.s3);
  out.logits2 = run_head(ctx, "cls.c2", feat.s3);

  if (cfg.tasks != TaskSet::SegOnly) {
    out.depth = run_head(ctx, "head.depth", feat.s3);
    if (cfg.tasks == TaskSet::Triple) {
      // HED-style side outputs off stages 1 and 2 plus the final map; each is
      // a 1x1 conv, upsample to full resolution, sigmoid; fused by averaging.
      Var t1 = sigmoid(tape, bilinear_upsample(tape, conv_block(ctx, "head.boundary.tap1", feat.s1, 1, 0), 2));
      Var t2 = sigmoid(tape, bilinear_upsample(tape, conv_block(ctx, "head.boundary.tap2", feat.s2, 1, 0), 4));
      Var t3 = sigmoid(tape, bilinear_upsample(tape, conv_block(ctx, "head.boundary.tap3", feat.s3, 1, 0), 8));
      out.boundary = mul_scalar(tape, add(tape, add(tape, t1, t2), t3), 1.f / 3.f);
    }
  }
  return out;
}

UncertaintyVars<float> uncertainty_vars(const Model& model, const ParamBinding& bound) {
  UncertaintyVars<float> u;
  const int i1 = model.find("uncert.s1");
  const int i2 = model.find("uncert.s2");
  const int i3 = model.find("uncert.s3");
  if (i1 >= 0) u.s_seg = bound.vars[static_cast<std::size_t>(i1)];
  if (i2 >= 0) u.s_depth = bound.vars[static_cast<std::size_t>(i2)];
  if (i3 >= 0) u.s_boundary = bound.vars[static_cast<std::size_t>(i3)];
  return u;
}

ParamGroups parameter_groups(const Model& model) {
  ParamGroups g;
  for (int i = 0; i < static_cast<int>(model.params.size()); ++i) {
    const std::string& n = model.params[static_cast<std::size_t>(i)].name;
    if (n.rfind("gen.", 0) == 0) g.generator.push_back(i);
    else if (n.rfind("cls.", 0) == 0) g.classifier.push_back(i);
    else if (n.rfind("head.", 0) == 0) g.head.push_back(i);
    else if (n.rfind("uncert.", 0) == 0) g.uncertainty.push_back(i);
    else throw ContractError(cat("parameter \"", n, "\" has no group prefix"));
  }
  return g;
}

std::uint64_t hash_params(const Model& model, const std::vector<int>& indices) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (int i : indices) {
    const Parameter& p = model.params[static_cast<std::size_t>(i)];
    mix(p.name.data(), p.name.size());
    mix(p.value.data.data(), p.value.data.size() * sizeof(float));
  }
  return h;
}

}  // namespace mcseg
