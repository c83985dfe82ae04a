#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dmad/autodiff/checkpoint.hpp"
#include "dmad/eval/attribution.hpp"
#include "dmad/eval/metrics.hpp"
#include "dmad/eval/pipeline.hpp"
#include "dmad/eval/report.hpp"
#include "dmad/eval/rollout.hpp"
#include "dmad/eval/runner.hpp"
#include "oracles.hpp"
#include "scripted.hpp"

using namespace dmad;
using namespace dmad::eval;
using testing::detection_at;
using testing::static_episode;

namespace {

model::ModelConfig small() {
  model::ModelConfig c;
  c.dim = 16;
  c.heads = 2;
  c.ffn_hidden = 32;
  c.layers = 2;
  c.num_obj = 12;
  c.num_map = 6;
  c.modes = 2;
  return c;
}

std::vector<sim::Episode> episodes(std::uint64_t first, std::uint64_t last, sim::WorldConfig w = {}) {
  std::vector<sim::Episode> out;
  for (auto s = first; s <= last; ++s) out.push_back(sim::gen_episode(s, w));
  return out;
}

std::vector<EvalItem> items_of(const std::vector<EpisodeDump>& dumps, const std::vector<sim::Episode>& eps) {
  std::vector<EvalItem> items;
  for (std::size_t i = 0; i < dumps.size(); ++i) items.push_back({&dumps[i], &eps[i]});
  return items;
}

}  // namespace

TEST_CASE("average precision of hand-enumerated PR curves") {
  CHECK(average_precision({true, true, true}, 3) == 1.0);
  CHECK(average_precision({}, 3) == 0.0);
  // TP, TP, FP over 3 GT: precision 1 up to recall 2/3 -> recall points 0.00..0.66.
  CHECK(average_precision({true, true, false}, 3) == doctest::Approx(67.0 / 101.0).epsilon(1e-15));
  // FP, TP: precision 1/2 at recall 1.
  CHECK(average_precision({false, true}, 1) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(average_precision({true}, 0), std::invalid_argument);
}

TEST_CASE("detection: three objects with one 1.5 m offset detection") {
  const auto ep = static_episode({{0, 0}, {10, 0}, {20, 0}}, 1, 0);
  EpisodeDump dump;
  FrameDump f;
  f.detections = {detection_at({0, 0}, 0, 0.9), detection_at({10, 0}, 1, 0.8), detection_at({21.5, 0}, 2, 0.7)};
  dump.frames = {f};
  const std::vector<EvalItem> items = {{&dump, &ep}};
  CHECK(detection_ap(items, 0, 0.5) == doctest::Approx(67.0 / 101.0).epsilon(1e-15));
  CHECK(detection_ap(items, 0, 1.0) == doctest::Approx(67.0 / 101.0).epsilon(1e-15));
  CHECK(detection_ap(items, 0, 2.0) == 1.0);
  CHECK(detection_ap(items, 0, 4.0) == 1.0);
  const auto m = detection_metrics(items);
  REQUIRE(m.map);
  CHECK(*m.map == doctest::Approx((2 * 67.0 / 101.0 + 2.0) / 4.0).epsilon(1e-15));
}

TEST_CASE("detection: perfect, empty and absent ground truth") {
  const auto ep = static_episode({{0, 0}, {10, 0}}, 2, 0);
  EpisodeDump perfect, empty;
  for (int t = 0; t < 2; ++t) {
    FrameDump f;
    f.frame = t;
    f.detections = {detection_at({0, 0}, 0, 1.0), detection_at({10, 0}, 1, 1.0)};
    perfect.frames.push_back(f);
    f.detections.clear();
    empty.frames.push_back(f);
  }
  auto m = detection_metrics({{&perfect, &ep}});
  CHECK(*m.map == 1.0);
  CHECK(*m.mave == 0.0);
  m = detection_metrics({{&empty, &ep}});
  CHECK(*m.map == 0.0);
  CHECK(!m.mave);
  const auto none = static_episode({}, 2, 0);
  CHECK(!detection_metrics({{&empty, &none}}).map);
}

TEST_CASE("AP is nondecreasing in the matching threshold") {
  const auto eps = episodes(20, 22);
  model::Model m(small());
  InferenceOptions opt;
  opt.policy.max_tracks = m.config().num_obj;
  std::vector<EpisodeDump> dumps;
  for (const auto& ep : eps) dumps.push_back(run_episode(m, ep, opt));
  // Nudge detections onto the truth so the curve is not identically zero.
  for (std::size_t i = 0; i < dumps.size(); ++i)
    for (auto& f : dumps[i].frames) {
      const auto& objs = eps[i].states[static_cast<std::size_t>(f.frame)].objects;
      for (std::size_t k = 0; k < f.detections.size() && k < objs.size(); ++k) {
        f.detections[k].center = {objs[k].position.x + 0.3 * double(k), objs[k].position.y, 0.0};
        f.detections[k].label = static_cast<int>(objs[k].category);
      }
    }
  const auto items = items_of(dumps, eps);
  for (int label : {0, 1}) {
    double last = 0.0;
    for (double thr : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0}) {
      const double ap = detection_ap(items, label, thr);
      CHECK(ap >= last);
      last = ap;
    }
  }
}

TEST_CASE("tracking: stable tracks, one swap, no predictions") {
  const auto ep = static_episode({{0, 0}, {10, 0}}, 6, 0);
  EpisodeDump stable, swapped, none;
  for (int t = 0; t < 6; ++t) {
    FrameDump f;
    f.frame = t;
    f.detections = {detection_at({0, 0}, 100, 0.9), detection_at({10, 0}, 101, 0.9)};
    stable.frames.push_back(f);
    if (t >= 3) f.detections = {detection_at({0, 0}, 101, 0.9), detection_at({10, 0}, 100, 0.9)};
    swapped.frames.push_back(f);
    f.detections.clear();
    none.frames.push_back(f);
  }
  auto m = tracking_metrics({{&stable, &ep}});
  CHECK(*m.mota == 1.0);
  CHECK(m.id_switches == 0);
  m = tracking_metrics({{&swapped, &ep}});
  CHECK(m.id_switches == 2);
  CHECK(*m.mota == doctest::Approx(1.0 - 2.0 / 12.0).epsilon(1e-15));
  m = tracking_metrics({{&none, &ep}});
  CHECK(*m.mota == 0.0);
  CHECK(m.false_positives == 0);
  CHECK(m.false_negatives == 12);
}

TEST_CASE("prediction: EPA formula and perfect forecasts") {
  // Two objects moving would need a moving episode; static objects have a
  // trivially known future, which is enough for the formula.
  const auto ep = static_episode({{0, 0}, {10, 0}}, 1, 12);
  std::vector<sim::Vec2> still(12, {0, 0});
  EpisodeDump dump;
  FrameDump f;
  auto hit = detection_at({0, 0}, 0, 0.9);
  hit.trajectories = {still};
  hit.mode_confidences = {1.0};
  auto fp = detection_at({30, 30}, 1, 0.8);
  fp.trajectories = {still};
  f.detections = {hit, fp};
  dump.frames = {f};
  auto m = prediction_metrics({{&dump, &ep}}, 12);
  CHECK(m.ground_truth == 2);
  CHECK(m.hits == 1);
  CHECK(m.false_positives == 1);
  CHECK(*m.epa == 0.25);
  CHECK(*m.min_ade == 0.0);
  // EPA is nonincreasing in alpha.
  double last = 1.0;
  for (double a : {0.0, 0.25, 0.5, 1.0, 2.0}) {
    EpaParams p;
    p.alpha = a;
    const double e = *prediction_metrics({{&dump, &ep}}, 12, p).epa;
    CHECK(e <= last);
    last = e;
  }
  dump.frames[0].detections.clear();
  CHECK(*prediction_metrics({{&dump, &ep}}, 12).epa == 0.0);
}

TEST_CASE("planning: L2 and collisions") {
  const auto ep = static_episode({}, 1, 6);
  const auto& expert = ep.states[0].expert_plan;
  EpisodeDump dump;
  FrameDump f;
  f.plan = expert;
  dump.frames = {f};
  auto m = planning_metrics({{&dump, &ep}}, 0.5);
  CHECK(*m.l2_1s == 0.0);
  CHECK(*m.l2_3s == 0.0);
  CHECK(*m.collision_rate == 0.0);
  dump.frames[0].plan.assign(6, ep.states[0].ego.position);
  m = planning_metrics({{&dump, &ep}}, 0.5);
  CHECK(*m.l2_1s == 5.0);
  CHECK(*m.l2_3s == 15.0);
  dump.frames[0].plan.resize(5);
  CHECK_THROWS_AS(planning_metrics({{&dump, &ep}}, 0.5), std::invalid_argument);

  // A parked vehicle straight ahead on the plan.
  const auto blocked = static_episode({{-35.0, -40.0}}, 1, 6);
  dump.frames[0].plan = blocked.states[0].expert_plan;
  CHECK(*planning_metrics({{&dump, &blocked}}, 0.5).collision_rate == 100.0);
}

TEST_CASE("chamfer distance") {
  const std::vector<sim::Vec2> a = {{0, 0}, {1, 0}, {2, 0}};
  CHECK(chamfer_distance(a, a) == 0.0);
  const std::vector<sim::Vec2> b = {{0, 1}, {1, 1}, {2, 1}};
  CHECK(chamfer_distance(a, b) == 1.0);
}

TEST_CASE("ground truth as prediction scores perfectly") {
  const auto eps = episodes(0, 7);
  std::vector<EpisodeDump> dumps;
  for (const auto& ep : eps) dumps.push_back(oracle_dump(ep, 12, 6));
  const auto r = evaluate(items_of(dumps, eps), 12, 0.5, "oracle");
  CHECK(*r.detection.map == 1.0);
  CHECK(*r.detection.mave == 0.0);
  CHECK(*r.tracking.mota == 1.0);
  CHECK(r.tracking.id_switches == 0);
  CHECK(*r.map.chamfer_ap == 1.0);
  CHECK(*r.prediction.epa == 1.0);
  CHECK(*r.prediction.min_ade == 0.0);
  CHECK(*r.planning.l2_1s == 0.0);
  CHECK(*r.planning.l2_2s == 0.0);
  CHECK(*r.planning.l2_3s == 0.0);
  CHECK(*r.planning.collision_rate == 0.0);
  // Idempotent to the byte.
  CHECK(metric_csv(r) == metric_csv(evaluate(items_of(dumps, eps), 12, 0.5, "oracle")));
}

TEST_CASE("dump json round trip") {
  const auto ep = sim::gen_episode(3, {});
  const auto dump = oracle_dump(ep, 12, 6);
  const auto path = std::filesystem::temp_directory_path() / "dmad_dump_roundtrip.jsonl";
  write_dump(dump, path);
  const auto back = read_dump(path);
  CHECK(back.seed == dump.seed);
  REQUIRE(back.frames.size() == dump.frames.size());
  for (std::size_t i = 0; i < dump.frames.size(); ++i) CHECK(to_json(back.frames[i]) == to_json(dump.frames[i]));
}

TEST_CASE("metric csv renders absent values as empty fields") {
  MetricReport r;
  r.manifest_hash = "abc";
  CHECK(metric_csv(r) == metric_csv_header() + "\n1,abc,,,,0,,,,,,,\n");
  CHECK(metric_csv_header() ==
        "schema,manifest_hash,mAP,mAVE,MOTA,IDS,chamfer_AP,EPA,minADE,L2_1s,L2_2s,L2_3s,collision_rate");
}

TEST_CASE("gini") {
  CHECK(gini(std::vector<double>(16, 0.3)) == 0.0);
  CHECK(gini(std::vector<double>(16, 0.0)) == 0.0);
  for (std::size_t d : {2u, 5u, 32u}) {
    std::vector<double> v(d, 0.0);
    v[0] = 1.0;
    CHECK(gini(v) == doctest::Approx(double(d - 1) / double(d)).epsilon(1e-14));
  }
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(1 + static_cast<std::size_t>(rng.uniform_int(0, 40)));
    for (double& x : v) x = rng.uniform(0.0, 3.0);
    const double g = gini(v);
    CHECK(g >= 0.0);
    CHECK(g <= 1.0);
    CHECK(g == doctest::Approx(testing::gini_pairwise(v)).epsilon(1e-12));
  }
}

TEST_CASE("permutation importance") {
  model::Model m(small());
  const std::size_t d = m.config().dim;
  Rng rng(2);
  QueryBatch batch;
  for (int i = 0; i < 24; ++i) {
    std::vector<double> q(d);
    for (double& x : q) x = rng.uniform(-1, 1);
    batch.queries.push_back(q);
    batch.labels.push_back(static_cast<std::size_t>(i % 2));
  }
  // Sever channel 3 from the box head's first layer.
  auto& w = m.store().get("semantic.box_head.fc1.weight");
  const std::size_t cols = w.shape().cols;
  REQUIRE(w.shape().rows == d);
  for (std::size_t c = 0; c < cols; ++c) w.mutable_value()[3 * cols + c] = 0.0;
  const auto imp = permutation_importance(m, batch, 4, 1);
  REQUIRE(imp.size() == d);
  CHECK(imp[3] == 0.0);
  for (double x : imp) CHECK(x >= 0.0);
  CHECK(*std::max_element(imp.begin(), imp.end()) > 0.0);
  batch.queries.resize(7);
  batch.labels.resize(7);
  CHECK_THROWS_AS(permutation_importance(m, batch, 4, 1), std::invalid_argument);
}

TEST_CASE("attribution null: fresh models show no systematic concentration shift") {
  const auto eps = episodes(40, 41);
  std::vector<double> diffs;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto a = small(), b = small();
    a.init_seed = 2 * seed + 1;
    b.init_seed = 2 * seed + 2;
    model::Model ma(a), mb(b);
    diffs.push_back(attribution(ma, mb, eps, 2, seed, 64).gini_increase());
  }
  double mean = 0.0, var = 0.0;
  for (double x : diffs) mean += x / 10.0;
  for (double x : diffs) var += (x - mean) * (x - mean) / 9.0;
  MESSAGE("null gini increase mean " << mean << " sd " << std::sqrt(var));
  // Two-sided t test at roughly the 1% level (t_9 = 3.25).
  CHECK(std::abs(mean) <= 3.25 * std::sqrt(var / 10.0));
}

TEST_CASE("closed-loop rollout") {
  sim::WorldConfig w;
  SUBCASE("deterministic") {
    model::Model m(small());
    InferenceOptions opt;
    opt.policy.max_tracks = m.config().num_obj;
    const auto a = rollout(&m, 5, w, 8, opt), b = rollout(&m, 5, w, 8, opt);
    REQUIRE(a.ego_positions.size() == 8);
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(a.ego_positions[i].x == b.ego_positions[i].x);
      CHECK(a.ego_positions[i].y == b.ego_positions[i].y);
    }
    CHECK(a.collisions == b.collisions);
  }
  SUBCASE("horizon 0 gives empty metrics") {
    const auto t = rollout(nullptr, 1, w, 0);
    CHECK(t.ego_positions.empty());
    const auto s = summarize({t});
    CHECK(s.steps == 0);
    CHECK(!s.collision_rate);
  }
  SUBCASE("untrained model collides more than the expert on dense scenes") {
    w.min_objects = 10;
    w.max_objects = 10;
    model::Model m(small());
    InferenceOptions opt;
    opt.policy.max_tracks = m.config().num_obj;
    std::vector<RolloutTrace> expert, random;
    for (std::uint64_t s = 0; s < 12; ++s) {
      expert.push_back(rollout(nullptr, s, w, 20));
      random.push_back(rollout(&m, s, w, 20, opt));
    }
    const auto e = summarize(expert), r = summarize(random);
    MESSAGE("expert " << *e.collision_rate << "% random " << *r.collision_rate << "%");
    CHECK(*e.collision_rate == 0.0);
    CHECK(*r.collision_rate > *e.collision_rate);
  }
}

TEST_CASE("report on an empty log is a header-only csv") {
  CHECK(loss_csv({}) == "schema,stage,step,loss,detection,map,unimodal,multimodal,planning\n");
  const auto dir = std::filesystem::temp_directory_path() / "dmad_empty_run";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "train_log.jsonl").close();
  const auto files = write_report(dir, dir);
  std::ifstream in(dir / "losses.csv");
  std::string text((std::istreambuf_iterator<char>(in)), {});
  CHECK(text == "schema,stage,step,loss,detection,map,unimodal,multimodal,planning\n");
  CHECK(files.size() == 2);
}

TEST_CASE("svg charts are well-formed") {
  const auto line = line_chart_svg("t", {{"a", {{0, 1}, {1, 2}}}});
  CHECK(line.rfind("<svg", 0) == 0);
  CHECK(line.find("</svg>") != std::string::npos);
  const auto bars = bar_chart_svg("b", {{"s1", {{0, 0.1}, {1, 0.5}}}, {"s2", {{0, 0.2}, {1, 0.3}}}});
  CHECK(bars.find("</svg>") != std::string::npos);
}

TEST_CASE("ablation rows follow the grid structure") {
  train::TrainConfig base;
  auto rows = ablation_rows(Grid::kInteractions, base);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].label == "obj-mt");
  CHECK(rows[0].config.model.interactions == model::Interactions{false, true, false});
  CHECK(rows[1].label == "mt-map");
  CHECK(rows[1].config.model.interactions == model::Interactions{false, false, true});
  CHECK(rows[2].label == "obj-map");
  CHECK(rows[2].config.model.interactions == model::Interactions{true, false, false});
  rows = ablation_rows(Grid::kHorizon, base);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].config.model.future_steps() == 4);
  CHECK(rows[1].config.model.future_steps() == 8);
  CHECK(rows[2].config.model.future_steps() == 12);
  rows = ablation_rows(Grid::kVelocity, base);
  REQUIRE(rows.size() == 4);
  rows = ablation_rows(Grid::kQueue, base);
  REQUIRE(rows.size() == 3);
  CHECK(rows[1].config.stage1.queue_length == 5);
  CHECK(rows[1].config.stage2.queue_length == 3);
  CHECK_THROWS_AS(grid_from("bogus"), std::invalid_argument);
}
