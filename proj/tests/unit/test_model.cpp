#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dmad/autodiff/ops.hpp"
#include "dmad/model/model.hpp"
#include "dmad/sim/episode.hpp"
#include "dmad/train/trainer.hpp"
#include "gradcheck.hpp"
#include "recursion.hpp"

using namespace dmad;
using namespace dmad::model;

namespace {

ModelConfig small(Architecture a = Architecture::kDivided) {
  ModelConfig c;
  c.dim = 16;
  c.heads = 2;
  c.ffn_hidden = 32;
  c.layers = 2;
  c.num_obj = 10;
  c.num_map = 6;
  c.modes = 3;
  return with_architecture(c, a);
}

const sim::Episode& episode() {
  static const sim::Episode ep = sim::gen_episode(7, sim::WorldConfig{});
  return ep;
}

FrameInput input(int t = 0) {
  FrameInput in;
  in.tokens = &episode().tokens[static_cast<std::size_t>(t)];
  in.ego_position = episode().states[static_cast<std::size_t>(t)].ego.position;
  return in;
}

void zero(ad::ParameterStore& store, const std::string& prefix) {
  for (auto* p : store.all())
    if (p->name().rfind(prefix, 0) == 0) std::fill(p->mutable_value().begin(), p->mutable_value().end(), 0.0);
}

std::vector<double> values(const ad::Tensor& t) { return {t.value().begin(), t.value().end()}; }

}  // namespace

TEST_CASE("box head width has no velocity channel unless regressed from object queries") {
  auto c = small();
  CHECK(Model(c).box_head().width() == 3 + 3 + 2 + 3);
  c.velocity_mode = VelocityMode::kRegressFromObj;
  CHECK(Model(c).box_head().width() == 3 + 3 + 2 + 3 + 2);
}

TEST_CASE("defaults") {
  ModelConfig c;
  CHECK(c.layers == 6);
  CHECK(c.unimodal_horizon_s == 4.0);
  CHECK(c.waypoints() == 13);
  CHECK(c.multimodal_steps == 12);
  CHECK(c.plan_steps == 6);
  CHECK(c.velocity_mode == VelocityMode::kDeriveFromUnimodal);
}

TEST_CASE("config validation") {
  auto c = small();
  c.layers = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small();
  c.modes = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small(Architecture::kSequential);
  c.interactions.obj_mt = true;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small(Architecture::kSequential);
  c.velocity_mode = VelocityMode::kDeriveFromUnimodal;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("zeroed heads decode to their anchors") {
  Model m(small());
  zero(m.store(), "semantic.box_head");
  zero(m.store(), "semantic.map_head");
  zero(m.store(), "motion.unimodal");
  zero(m.store(), "motion.planner");
  ad::Tape tape;
  const auto out = m.forward(tape, input(3));
  for (const auto& lo : out.layers) {
    for (std::size_t r = 0; r < lo.ref_in.size(); ++r) {
      for (std::size_t c = 0; c < 3; ++c) {
        CHECK(lo.boxes.centers.at(r, c) == lo.ref_in[r][c]);
        CHECK(std::exp(lo.boxes.log_size.at(r, c)) == 1.0);
      }
    }
    for (double v : lo.map.vertices.value()) CHECK(v == 0.0);
    for (std::size_t r = 0; r < lo.map.logits.rows(); ++r)
      for (std::size_t c = 1; c < lo.map.logits.cols(); ++c) CHECK(lo.map.logits.at(r, c) == lo.map.logits.at(r, 0));
    // Unimodal waypoints are anchored at the exported reference, so a zero
    // head gives a stationary track.
    for (std::size_t r = 0; r < lo.unimodal.rows(); ++r)
      for (std::size_t w = 0; w < m.config().waypoints(); ++w) {
        CHECK(lo.unimodal.at(r, 2 * w) == lo.ref_export[r][0]);
        CHECK(lo.unimodal.at(r, 2 * w + 1) == lo.ref_export[r][1]);
      }
  }
  for (double v : out.velocity.value()) CHECK(v == 0.0);
  const auto ego = episode().states[3].ego.position;
  for (std::size_t k = 0; k < m.config().plan_steps; ++k) {
    CHECK(out.plan.at(0, 2 * k) == ego.x);
    CHECK(out.plan.at(0, 2 * k + 1) == ego.y);
  }
}

TEST_CASE("multimodal confidences sum to one") {
  Model m(small());
  ad::Tape tape;
  const auto out = m.forward(tape, input());
  REQUIRE(out.multimodal);
  const auto& c = out.multimodal->confidences;
  for (std::size_t r = 0; r < c.rows(); ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < c.cols(); ++k) {
      CHECK(c.at(r, k) >= 0.0);
      s += c.at(r, k);
    }
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("velocity from trajectory") {
  ad::Tape tape;
  SUBCASE("central difference formula") {
    // past=1: columns (s_-1, s_0, s_1)
    const auto w = tape.constant({1, 6}, {0.0, 0.0, 1.0, 0.0, 2.0, 0.0});
    const auto v = velocity_from_trajectory(w, 1, 0.5);
    CHECK(v.at(0, 0) == 2.0);
    CHECK(v.at(0, 1) == 0.0);
  }
  SUBCASE("stationary") {
    const auto w = tape.constant({1, 6}, {3.0, 4.0, 3.0, 4.0, 3.0, 4.0});
    const auto v = velocity_from_trajectory(w, 1, 0.5);
    CHECK(v.at(0, 0) == 0.0);
    CHECK(v.at(0, 1) == 0.0);
  }
  SUBCASE("no past waypoint") {
    const auto w = tape.constant({1, 4}, {0.0, 0.0, 1.0, 0.0});
    CHECK_THROWS_AS(velocity_from_trajectory(w, 0, 0.5), std::invalid_argument);
  }
  SUBCASE("gradient of |v|^2 matches finite differences") {
    Rng rng(3);
    std::vector<double> w(2 * 5);
    for (double& x : w) x = rng.uniform(-3.0, 3.0);
    const double err = testing::gradcheck(
        [](ad::Tape&, const std::vector<ad::Tensor>& x) {
          return ad::sum_all(ad::square(velocity_from_trajectory(x[0], 2, 0.5)));
        },
        {{{1, 10}, w}});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("masked and physically separated decoders agree bit for bit") {
  for (auto arch : {Architecture::kDivided, Architecture::kSequential}) {
    auto c = small(arch);
    c.interactions = {false, false, false};
    Model m(c);
    ad::Tape t1, t2;
    auto a = input(2), b = input(2);
    b.force_mask = true;
    const auto o1 = m.forward(t1, a), o2 = m.forward(t2, b);
    CHECK(values(o1.obj) == values(o2.obj));
    CHECK(values(o1.final().map.vertices) == values(o2.final().map.vertices));
    CHECK(values(o1.final().unimodal) == values(o2.final().unimodal));
    CHECK(values(o1.plan) == values(o2.plan));
  }
  // Only one of the three blocks masked at a time in the divided wiring.
  for (Interactions f : {Interactions{false, true, false}, Interactions{false, false, true},
                         Interactions{true, false, false}}) {
    auto c = small();
    c.interactions = f;
    Model m(c);
    ad::Tape t1, t2;
    auto a = input(2), b = input(2);
    b.force_mask = true;
    const auto o1 = m.forward(t1, a), o2 = m.forward(t2, b);
    CHECK(values(o1.obj) == values(o2.obj));
    CHECK(values(o1.mt) == values(o2.mt));
    CHECK(values(o1.final().map.vertices) == values(o2.final().map.vertices));
    CHECK(values(o1.plan) == values(o2.plan));
  }
}

TEST_CASE("interactive layer is equivariant to object query order") {
  auto c = small();
  ad::ParameterStore store;
  Rng rng(11);
  InteractiveLayer layer(store, "l", c, rng);
  const auto& tokens = episode().tokens[0];
  ad::Tape tape;
  const std::size_t n = 5, d = c.dim;
  std::vector<double> obj(n * d), map(c.num_map * d), z(tokens.centers.size() * d);
  for (double& x : obj) x = rng.uniform(-1, 1);
  for (double& x : map) x = rng.uniform(-1, 1);
  for (double& x : z) x = rng.uniform(-1, 1);
  Points refs;
  for (std::size_t i = 0; i < n; ++i) refs.push_back({rng.uniform(-40, 40), rng.uniform(-40, 40), 0.0});
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  std::vector<double> obj_p;
  Points refs_p;
  for (auto i : perm) {
    obj_p.insert(obj_p.end(), obj.begin() + static_cast<std::ptrdiff_t>(i * d),
                 obj.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    refs_p.push_back(refs[i]);
  }
  const auto zt = tape.constant({tokens.centers.size(), d}, z);
  const auto mt = tape.constant({c.num_map, d}, map);
  const auto a = layer(tape, tape.constant({n, d}, obj), mt, zt, refs, tokens.centers, c.interactions);
  const auto b = layer(tape, tape.constant({n, d}, obj_p), mt, zt, refs_p, tokens.centers, c.interactions);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < d; ++k) CHECK(b.obj.at(r, k) == doctest::Approx(a.obj.at(perm[r], k)).epsilon(1e-12));
  for (std::size_t i = 0; i < a.map.size(); ++i)
    CHECK(b.map.value()[i] == doctest::Approx(a.map.value()[i]).epsilon(1e-12));
}

TEST_CASE("reference export does not feed back into semantic decoding") {
  // Scrambling every motion-side parameter must leave the reference sequence intact.
  Model a(small()), b(small());
  Rng rng(5);
  for (auto* p : b.store().all())
    if (p->name().rfind(kMotionGroup, 0) == 0)
      for (double& v : p->mutable_value()) v = rng.uniform(-2.0, 2.0);
  ad::Tape t1, t2;
  const auto oa = a.forward(t1, input(4)), ob = b.forward(t2, input(4));
  CHECK(values(oa.final().unimodal) != values(ob.final().unimodal));
  for (std::size_t l = 0; l < oa.layers.size(); ++l) {
    CHECK(oa.layers[l].ref_in == ob.layers[l].ref_in);
    CHECK(oa.layers[l].ref_export == ob.layers[l].ref_export);
  }
}

TEST_CASE("single layer: exported reference is ref plus offsets") {
  auto c = small();
  c.layers = 1;
  Model m(c);
  ad::Tape tape;
  const auto out = m.forward(tape, input());
  const auto& lo = out.final();
  for (std::size_t r = 0; r < lo.ref_in.size(); ++r)
    for (std::size_t k = 0; k < 3; ++k)
      CHECK(lo.ref_export[r][k] == std::clamp(lo.ref_in[r][k] + lo.boxes.offsets.at(r, k), -m.ref_clip(), m.ref_clip()));
}

TEST_CASE("classification loss sends no gradient into the reference") {
  Model m(small());
  ad::Tape tape;
  const auto out = m.forward(tape, input());
  tape.backward(ad::sum_all(out.final().boxes.logits));
  for (double g : m.store().get("semantic.ref_init").grad()) CHECK(g == 0.0);
}

TEST_CASE("bayes recursion: references are shared and propagated bit-exactly") {
  for (auto arch : {Architecture::kDivided, Architecture::kSequential}) {
    Model m(small(arch));
    const auto r = testing::check_recursion(m, episode(), 0.05);
    CHECK(r.frames == 12);
    CHECK(r.propagated > 0);
    CHECK(r.motion_refs_shared);
    CHECK(r.propagation_exact);
    CHECK(r.schedule_ok);
  }
}

TEST_CASE("gradient division on a randomly initialized model") {
  train::TrainConfig cfg;
  cfg.model = small();
  Model m(cfg.model);
  const auto audit = train::audit_gradients(m, episode(), 2, 3, true, cfg);
  for (const char* f : {"unimodal", "multimodal", "planning"}) {
    CHECK(audit.at(f).at(kSemanticGroup) == 0.0);
    CHECK(audit.at(f).at(kEncoderGroup) > 0.0);
    CHECK(audit.at(f).at(kMotionGroup) > 0.0);
  }
  for (const char* f : {"detection", "map"}) {
    CHECK(audit.at(f).at(kMotionGroup) == 0.0);
    CHECK(audit.at(f).at(kEncoderGroup) > 0.0);
    CHECK(audit.at(f).at(kSemanticGroup) > 0.0);
  }
  CHECK(train::audit_separated(audit, cfg.model, true));
}

TEST_CASE("sequential wiring lets motion losses reach the semantic decoder") {
  train::TrainConfig cfg;
  cfg.model = small(Architecture::kSequential);
  Model m(cfg.model);
  const auto audit = train::audit_gradients(m, episode(), 2, 3, true, cfg);
  for (const char* f : {"unimodal", "multimodal", "planning"}) CHECK(audit.at(f).at(kSemanticGroup) > 0.0);
  CHECK(train::audit_separated(audit, cfg.model, true));
}

