#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "mcseg/checkpoint.hpp"
#include "mcseg/models.hpp"

using namespace mcseg;
namespace fs = std::filesystem;

namespace {

Tensor random_image(Rng& rng, int c, int h, int w) {
  Tensor t({1, c, h, w});
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
  return t;
}

Outputs run(const Model& m, Tape& tape, const Tensor& rgb, const Tensor* hha,
            ForwardTrace* trace = nullptr) {
  ParamBinding bound = bind_params(tape, m);
  Var r = tape.constant(rgb);
  std::optional<Var> h;
  if (hha != nullptr) h = tape.constant(*hha);
  return forward(tape, m, bound, r, h, ForwardMode::Train, trace);
}

}  // namespace

TEST_CASE("build_model: early fusion consumes 6 input channels") {
  Rng rng(1);
  Model m = build_model({FusionKind::Early, TaskSet::SegOnly, 6, 8}, rng);
  const Parameter& first = m.params[static_cast<std::size_t>(m.require("gen.main.s1.c1.w"))];
  CHECK(first.value.shape == std::vector<int>{8, 6, 3, 3});
}

TEST_CASE("build_model: score-gate parameter census") {
  Rng rng(2);
  Model m = build_model({FusionKind::ScoreGate, TaskSet::SegOnly, 5, 8}, rng);

  // two full encoders + four classifier heads + one shared gate conv
  std::set<std::string> names;
  for (const auto& p : m.params) names.insert(p.name);
  for (const char* enc : {"gen.rgb", "gen.hha"}) {
    for (int s = 1; s <= 3; ++s)
      for (int c = 1; c <= 2; ++c) {
        CHECK(names.count(cat(enc, ".s", s, ".c", c, ".w")) == 1);
        CHECK(names.count(cat(enc, ".s", s, ".c", c, ".b")) == 1);
      }
  }
  for (const char* head : {"cls.c1.rgb", "cls.c1.hha", "cls.c2.rgb", "cls.c2.hha"}) {
    for (int j = 1; j <= 3; ++j) {
      CHECK(names.count(cat(head, ".conv", j, ".w")) == 1);
    }
  }
  CHECK(names.count("cls.gate.w") == 1);
  CHECK(names.count("cls.gate.b") == 1);
  // census total: 2 encoders x 12 + 4 heads x 6 + gate 2
  CHECK(m.params.size() == 2 * 12 + 4 * 6 + 2);

  const Parameter& gate = m.params[static_cast<std::size_t>(m.require("cls.gate.w"))];
  CHECK(gate.value.shape == std::vector<int>{5, 10, 1, 1});
}

TEST_CASE("build_model: invalid fusion/tasks combinations are rejected") {
  Rng rng(3);
  CHECK_THROWS_AS(build_model({FusionKind::Early, TaskSet::Dual, 6, 8}, rng), ContractError);
  CHECK_THROWS_AS(build_model({FusionKind::ScoreGate, TaskSet::Triple, 6, 8}, rng), ContractError);
  CHECK_NOTHROW(build_model({FusionKind::RgbOnly, TaskSet::Triple, 6, 8}, rng));
}

TEST_CASE("forward: rgb_only triple yields all four outputs with the right ranges") {
  Rng rng(4);
  Model m = build_model({FusionKind::RgbOnly, TaskSet::Triple, 6, 8}, rng);
  Tape tape;
  Tensor rgb = random_image(rng, 3, 32, 32);
  Outputs out = run(m, tape, rgb, nullptr);

  CHECK(tape.val(out.logits1).shape == std::vector<int>{1, 6, 32, 32});
  CHECK(tape.val(out.logits2).shape == std::vector<int>{1, 6, 32, 32});
  REQUIRE(out.depth.has_value());
  CHECK(tape.val(*out.depth).shape == std::vector<int>{1, 3, 32, 32});
  REQUIRE(out.boundary.has_value());
  CHECK(tape.val(*out.boundary).shape == std::vector<int>{1, 1, 32, 32});
  for (float v : tape.val(*out.boundary).data) {
    CHECK(v > 0.f);
    CHECK(v < 1.f);
  }
}

TEST_CASE("forward: every fusion kind runs and emits input-sized logits") {
  Rng rng(5);
  for (FusionKind f : {FusionKind::RgbOnly, FusionKind::HhaOnly, FusionKind::Early,
                       FusionKind::LateAdd, FusionKind::LateConcat, FusionKind::ScoreAdd,
                       FusionKind::ScoreConcatConv, FusionKind::ScoreGate, FusionKind::FuseNet}) {
    Model m = build_model({f, TaskSet::SegOnly, 4, 4}, rng);
    Tape tape;
    Tensor rgb = random_image(rng, 3, 16, 16);
    Tensor hha = random_image(rng, 3, 16, 16);
    Outputs out = run(m, tape, rgb, &hha);
    CHECK(tape.val(out.logits1).shape == std::vector<int>{1, 4, 16, 16});
    CHECK(tape.val(out.logits2).shape == std::vector<int>{1, 4, 16, 16});
  }
}

TEST_CASE("forward: missing modality is a contract violation") {
  Rng rng(6);
  Model m = build_model({FusionKind::LateAdd, TaskSet::SegOnly, 4, 4}, rng);
  Tape tape;
  ParamBinding bound = bind_params(tape, m);
  Var rgb = tape.constant(random_image(rng, 3, 16, 16));
  CHECK_THROWS_AS(forward(tape, m, bound, rgb, std::nullopt), ContractError);
}

TEST_CASE("forward: late_add vs late_concat share activations up to the fusion point") {
  Rng rng(7);
  Model add_model = build_model({FusionKind::LateAdd, TaskSet::SegOnly, 4, 4}, rng);
  Rng rng2(7);  // identical encoder draws; heads differ in shape
  Model cat_model = build_model({FusionKind::LateConcat, TaskSet::SegOnly, 4, 4}, rng2);

  Rng rx(8);
  Tensor rgb = random_image(rx, 3, 16, 16);
  Tensor hha = random_image(rx, 3, 16, 16);

  Tape ta, tc;
  ForwardTrace tra, trc;
  Outputs oa = run(add_model, ta, rgb, &hha, &tra);
  Outputs oc = run(cat_model, tc, rgb, &hha, &trc);

  // identical up to the fusion point
  CHECK(ta.val(tra.find("gen.rgb.s3.out")).data == tc.val(trc.find("gen.rgb.s3.out")).data);
  CHECK(ta.val(tra.find("gen.hha.s3.out")).data == tc.val(trc.find("gen.hha.s3.out")).data);
  // different after it
  CHECK(ta.val(tra.find("gen.fused.s3.out")).shape != tc.val(trc.find("gen.fused.s3.out")).shape);
  CHECK(ta.val(oa.logits1).data != tc.val(oc.logits1).data);
}

TEST_CASE("forward: fusenet with a zeroed HHA encoder equals rgb_only") {
  Rng rng(9);
  Model rgb_model = build_model({FusionKind::RgbOnly, TaskSet::SegOnly, 5, 4}, rng);
  Rng rng2(10);
  Model fuse_model = build_model({FusionKind::FuseNet, TaskSet::SegOnly, 5, 4}, rng2);

  // copy rgb weights (gen.main.* -> gen.rgb.*), zero the HHA stream, share heads
  for (auto& p : fuse_model.params) {
    if (p.name.rfind("gen.hha.", 0) == 0) {
      p.value.fill(0.f);
    } else if (p.name.rfind("gen.rgb.", 0) == 0) {
      const std::string src = "gen.main." + p.name.substr(8);
      p.value = rgb_model.params[static_cast<std::size_t>(rgb_model.require(src))].value;
    } else {
      p.value = rgb_model.params[static_cast<std::size_t>(rgb_model.require(p.name))].value;
    }
  }

  Rng rx(11);
  Tensor rgb = random_image(rx, 3, 16, 16);
  Tensor hha = random_image(rx, 3, 16, 16);
  Tape ta, tb;
  Outputs oa = run(rgb_model, ta, rgb, nullptr);
  Outputs ob = run(fuse_model, tb, rgb, &hha);
  CHECK(ta.val(oa.logits1).data == tb.val(ob.logits1).data);
  CHECK(ta.val(oa.logits2).data == tb.val(ob.logits2).data);
}

TEST_CASE("forward: permuting class channels of both classifiers permutes logits") {
  Rng rng(12);
  const int K = 5;
  Model m = build_model({FusionKind::RgbOnly, TaskSet::SegOnly, K, 4}, rng);
  Rng rx(13);
  Tensor rgb = random_image(rx, 3, 16, 16);

  Tape t0;
  Outputs base = run(m, t0, rgb, nullptr);

  const int perm[K] = {3, 0, 4, 1, 2};  // pi(k): new channel pi[k] holds old k
  Model pm = m;
  for (const char* head : {"cls.c1", "cls.c2"}) {
    const int wi = pm.require(cat(head, ".conv3.w"));
    const int bi = pm.require(cat(head, ".conv3.b"));
    Tensor w = m.params[static_cast<std::size_t>(wi)].value;
    Tensor b = m.params[static_cast<std::size_t>(bi)].value;
    Tensor wp = w, bp = b;
    const std::int64_t per_out = w.numel() / K;
    for (int k = 0; k < K; ++k) {
      std::copy_n(w.data.begin() + k * per_out, per_out,
                  wp.data.begin() + perm[k] * per_out);
      bp.data[static_cast<std::size_t>(perm[k])] = b.data[static_cast<std::size_t>(k)];
    }
    pm.params[static_cast<std::size_t>(wi)].value = wp;
    pm.params[static_cast<std::size_t>(bi)].value = bp;
  }

  Tape t1;
  Outputs permuted = run(pm, t1, rgb, nullptr);
  const Tensor& l0 = t0.val(base.logits1);
  const Tensor& l1 = t1.val(permuted.logits1);
  for (int k = 0; k < K; ++k)
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 16; ++c) {
        CHECK(l1.at4(0, perm[k], r, c) == l0.at4(0, k, r, c));
      }
}

TEST_CASE("forward: pure, and eval mode coincides with train mode") {
  Rng rng(14);
  Model m = build_model({FusionKind::RgbOnly, TaskSet::Dual, 4, 4}, rng);
  Rng rx(15);
  Tensor rgb = random_image(rx, 3, 16, 16);
  Tape t0, t1;
  ParamBinding b0 = bind_params(t0, m);
  ParamBinding b1 = bind_params(t1, m);
  Outputs o0 = forward(t0, m, b0, t0.constant(rgb), std::nullopt, ForwardMode::Train);
  Outputs o1 = forward(t1, m, b1, t1.constant(rgb), std::nullopt, ForwardMode::Eval);
  CHECK(t0.val(o0.logits1).data == t1.val(o1.logits1).data);
  CHECK(t0.val(*o0.depth).data == t1.val(*o1.depth).data);
}

TEST_CASE("parameter_groups: disjoint, exhaustive, spec'd contents") {
  Rng rng(16);

  SUBCASE("rgb_only seg_only has no head or uncertainty params") {
    Model m = build_model({FusionKind::RgbOnly, TaskSet::SegOnly, 6, 8}, rng);
    ParamGroups g = parameter_groups(m);
    CHECK(g.head.empty());
    CHECK(g.uncertainty.empty());
    CHECK(g.generator.size() + g.classifier.size() == m.params.size());
  }

  SUBCASE("score fusion classifier group holds the four heads plus fusion conv") {
    Model m = build_model({FusionKind::ScoreConcatConv, TaskSet::SegOnly, 6, 8}, rng);
    ParamGroups g = parameter_groups(m);
    std::set<std::string> heads;
    for (int i : g.classifier) {
      const std::string& n = m.params[static_cast<std::size_t>(i)].name;
      heads.insert(n.substr(0, n.find(".conv")));
    }
    CHECK(heads.count("cls.c1.rgb") == 1);
    CHECK(heads.count("cls.c1.hha") == 1);
    CHECK(heads.count("cls.c2.rgb") == 1);
    CHECK(heads.count("cls.c2.hha") == 1);
    CHECK(m.has("cls.fuse.w"));
  }

  SUBCASE("triple model: union of groups is everything, pairwise disjoint") {
    Model m = build_model({FusionKind::RgbOnly, TaskSet::Triple, 6, 8}, rng);
    ParamGroups g = parameter_groups(m);
    std::set<int> all;
    std::size_t total = 0;
    for (const auto* grp : {&g.generator, &g.classifier, &g.head, &g.uncertainty}) {
      for (int i : *grp) all.insert(i);
      total += grp->size();
    }
    CHECK(total == m.params.size());
    CHECK(all.size() == m.params.size());
    CHECK(g.uncertainty.size() == 3);
    CHECK(!g.head.empty());
  }
}

TEST_CASE("classifiers C1 and C2: identical architecture, independent init") {
  Rng rng(17);
  Model m = build_model({FusionKind::RgbOnly, TaskSet::SegOnly, 6, 8}, rng);
  const Tensor& w1 = m.params[static_cast<std::size_t>(m.require("cls.c1.conv1.w"))].value;
  const Tensor& w2 = m.params[static_cast<std::size_t>(m.require("cls.c2.conv1.w"))].value;
  CHECK(w1.shape == w2.shape);
  CHECK(w1.data != w2.data);
}

TEST_CASE("checkpoint: bitwise round trip and validation failures") {
  Rng rng(18);
  Model m = build_model({FusionKind::RgbOnly, TaskSet::Triple, 6, 4}, rng);
  const fs::path dir = fs::temp_directory_path() / "mcseg_test_ckpt";
  fs::create_directories(dir);
  const std::string path = (dir / "model.mcseg").string();

  save_checkpoint(m, path);
  Model loaded = load_checkpoint(path);
  CHECK(loaded.cfg.fusion == m.cfg.fusion);
  CHECK(loaded.cfg.tasks == m.cfg.tasks);
  REQUIRE(loaded.params.size() == m.params.size());
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    CHECK(loaded.params[i].name == m.params[i].name);
    CHECK(loaded.params[i].value.data == m.params[i].value.data);
  }

  // bad magic
  {
    std::ofstream bad((dir / "bad.mcseg").string(), std::ios::binary);
    bad << "NOTMAGIC0000";
  }
  CHECK_THROWS_AS(load_checkpoint((dir / "bad.mcseg").string()), IoError);

  // truncated data section
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes(std::istreambuf_iterator<char>(in), {});
    std::ofstream out((dir / "trunc.mcseg").string(), std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 64));
  }
  CHECK_THROWS_AS(load_checkpoint((dir / "trunc.mcseg").string()), IoError);

  CHECK_THROWS_AS(load_checkpoint((dir / "missing.mcseg").string()), IoError);
}
