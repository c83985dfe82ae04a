#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "dmad/core/rng.hpp"
#include "dmad/tracker/tracker.hpp"

using namespace dmad;
using namespace dmad::tracker;

namespace {

// One frame of `n` slots: slots carry the current tracks first, then fresh ones.
FrameTracks frame_for(const TrackSet& ts, std::size_t n, const std::vector<double>& conf) {
  FrameTracks f;
  f.slot_ids = ts.ids();
  f.slot_ids.resize(n, -1);
  f.confidences = conf;
  for (std::size_t i = 0; i < n; ++i) f.next_refs.push_back({double(i), 0.0, 0.0});
  return f;
}

PropagationPolicy inference(std::size_t cap = 8, int misses = 2) {
  PropagationPolicy p;
  p.max_tracks = cap;
  p.max_misses = misses;
  return p;
}

}  // namespace

TEST_CASE("training positives are the matched set") {
  PropagationPolicy p;
  p.mode = Mode::kTraining;
  const std::vector<double> conf = {0.9, 0.1, 0.8, 0.0};
  CHECK(select_positives(conf, p, std::vector<std::size_t>{3, 1}) == std::vector<std::size_t>{1, 3});
  CHECK(select_positives(conf, p, std::vector<std::size_t>{}).empty());
  CHECK_THROWS_AS(select_positives(conf, p, std::nullopt), std::invalid_argument);
  CHECK_THROWS_AS(select_positives(conf, p, std::vector<std::size_t>{4}), std::out_of_range);
}

TEST_CASE("inference positives threshold the confidence") {
  PropagationPolicy p;
  const std::vector<double> conf = {0.9, 0.35, 0.36, 0.999};
  CHECK(select_positives(conf, p, std::nullopt) == std::vector<std::size_t>{0, 2, 3});
  p.tau = 0.999999;
  CHECK(select_positives(conf, p, std::nullopt).empty());
  // Monotone nonincreasing in tau.
  Rng rng(1);
  std::vector<double> many(50);
  for (double& c : many) c = rng.uniform(0.0, 0.999);
  std::size_t last = many.size() + 1;
  for (double tau = 0.01; tau < 1.0; tau += 0.01) {
    p.tau = tau;
    const auto n = select_positives(many, p, std::nullopt).size();
    CHECK(n <= last);
    last = n;
  }
}

TEST_CASE("policy validation") {
  PropagationPolicy p;
  p.tau = 1.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p.tau = 0.5;
  p.max_misses = -1;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("empty track set leaves every slot fresh") {
  TrackSet ts;
  const auto f = frame_for(ts, 4, {0, 0, 0, 0});
  for (int id : f.slot_ids) CHECK(id == -1);
  CHECK(ts.refs().empty());
}

TEST_CASE("a track positive in five frames keeps one id") {
  TrackSet ts;
  const auto p = inference();
  std::set<int> ids;
  for (int t = 0; t < 5; ++t) {
    std::vector<double> conf(4, 0.0);
    conf[0] = 0.9;  // the track occupies slot 0 once carried; slot 0 is fresh at t=0
    auto f = frame_for(ts, 4, conf);
    f.positives = select_positives(f.confidences, p, std::nullopt);
    const auto r = ts.update(f, p);
    ids.insert(r.slot_ids[0]);
  }
  CHECK(ids.size() == 1);
  CHECK(ts.size() == 1);
  CHECK(ts.tracks()[0].age == 5);
}

TEST_CASE("propagated reference is the slot's s_1 bit for bit") {
  TrackSet ts;
  const auto p = inference();
  auto f = frame_for(ts, 3, {0.1, 0.8, 0.9});
  f.next_refs = {{0.1, 0.2, 0.3}, {1.0 / 3.0, -2.0 / 7.0, 0.0}, {5e-300, 1e300, -0.0}};
  f.positives = select_positives(f.confidences, p, std::nullopt);
  ts.update(f, p);
  REQUIRE(ts.size() == 2);
  CHECK(ts.refs()[0] == f.next_refs[1]);
  CHECK(ts.refs()[1] == f.next_refs[2]);
}

TEST_CASE("retirement after more than M consecutive misses") {
  SUBCASE("M = 0 drops on the first miss") {
    TrackSet ts;
    const auto p = inference(8, 0);
    auto f = frame_for(ts, 2, {0.9, 0.0});
    f.positives = {0};
    ts.update(f, p);
    f = frame_for(ts, 2, {0.1, 0.0});
    const auto r = ts.update(f, p);
    CHECK(r.retired == 1);
    CHECK(ts.empty());
  }
  SUBCASE("M = 2 survives two misses and retires on the third") {
    TrackSet ts;
    const auto p = inference(8, 2);
    auto f = frame_for(ts, 2, {0.9, 0.0});
    f.positives = {0};
    ts.update(f, p);
    for (int miss = 1; miss <= 2; ++miss) {
      f = frame_for(ts, 2, {0.1, 0.0});
      ts.update(f, p);
      CHECK(ts.size() == 1);
      CHECK(ts.tracks()[0].misses == miss);
    }
    f = frame_for(ts, 2, {0.1, 0.0});
    CHECK(ts.update(f, p).retired == 1);
    CHECK(ts.empty());
  }
  SUBCASE("alternating hits and misses never retire with M = 2") {
    TrackSet ts;
    const auto p = inference(8, 2);
    auto f = frame_for(ts, 2, {0.9, 0.0});
    f.positives = {0};
    ts.update(f, p);
    const int id = ts.ids()[0];
    for (int t = 0; t < 100; ++t) {
      f = frame_for(ts, 2, {t % 2 ? 0.9 : 0.1, 0.0});
      f.positives = select_positives(f.confidences, p, std::nullopt);
      ts.update(f, p);
      REQUIRE(ts.size() == 1);
      CHECK(ts.ids()[0] == id);
    }
  }
}

TEST_CASE("unknown carried id is rejected") {
  TrackSet ts;
  FrameTracks f;
  f.slot_ids = {7};
  f.confidences = {0.9};
  f.next_refs = {{0, 0, 0}};
  CHECK_THROWS_AS(ts.update(f, inference()), std::invalid_argument);
}

TEST_CASE("1000-frame fuzz: live tracks never exceed the slot cap and ids are never reused") {
  Rng rng(42);
  const std::size_t slots = 12;
  const auto p = inference(slots, 2);
  TrackSet ts;
  std::set<int> retired_ids;
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> conf(slots);
    for (double& c : conf) c = rng.uniform(0.0, 1.0);
    auto f = frame_for(ts, slots, conf);
    f.positives = select_positives(f.confidences, p, std::nullopt);
    const auto before = ts.ids();
    ts.update(f, p);
    CHECK(ts.size() <= slots);
    const auto now = ts.ids();
    std::set<int> live(now.begin(), now.end());
    CHECK(live.size() == ts.size());
    for (int id : before)
      if (!live.count(id)) retired_ids.insert(id);
    for (int id : live) CHECK(retired_ids.count(id) == 0);
  }
  CHECK(ts.next_id() > static_cast<int>(slots));
}

TEST_CASE("cap keeps the most confident tracks") {
  TrackSet ts;
  auto p = inference(2, 2);
  auto f = frame_for(ts, 4, {0.5, 0.9, 0.7, 0.6});
  f.positives = {0, 1, 2, 3};
  const auto r = ts.update(f, p);
  CHECK(r.capped == 2);
  REQUIRE(ts.size() == 2);
  CHECK(ts.tracks()[0].confidence == 0.9);
  CHECK(ts.tracks()[1].confidence == 0.7);
}
