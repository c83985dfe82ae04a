#pragma once

// Replays an episode through the model and tracker while recording every
// reference array, so tests can compare them bit for bit.

#include <string>
#include <vector>

#include "dmad/autodiff/ops.hpp"
#include "dmad/model/model.hpp"
#include "dmad/sim/episode.hpp"
#include "dmad/tracker/tracker.hpp"

namespace dmad::testing {

struct RecursionCheck {
  std::size_t frames = 0;
  std::size_t propagated = 0;     // carried references compared across frame boundaries
  bool motion_refs_shared = true; // motion layer refs == semantic export (agents) at every layer
  bool propagation_exact = true;  // carried refs == previous frame's s_1 at the track slot
  bool schedule_ok = true;
};

inline std::vector<std::string> expected_schedule(std::size_t layers, bool divided) {
  std::vector<std::string> s;
  for (std::size_t l = 0; l < layers; ++l) {
    s.push_back("measure:" + std::to_string(l));
    if (divided) s.push_back("update:" + std::to_string(l));
  }
  s.push_back("predict");
  return s;
}

inline RecursionCheck check_recursion(const model::Model& m, const sim::Episode& ep, double tau) {
  RecursionCheck out;
  const auto& cfg = m.config();
  tracker::PropagationPolicy policy;
  policy.tau = tau;
  policy.max_tracks = cfg.num_obj;
  tracker::TrackSet tracks;
  model::Points prev_s1;
  for (int t = 0; t < ep.frames(); ++t) {
    ad::Tape tape;
    model::FrameInput in;
    in.tokens = &ep.tokens[static_cast<std::size_t>(t)];
    in.ego_position = ep.states[static_cast<std::size_t>(t)].ego.position;
    in.motion_heads = false;
    in.carried.ids = tracks.ids();
    in.carried.refs = tracks.refs();
    const std::size_t d = cfg.dim, k = tracks.size();
    if (k > 0) {
      std::vector<double> obj, mt;
      for (const auto& tr : tracks.tracks()) {
        obj.insert(obj.end(), tr.obj.begin(), tr.obj.end());
        mt.insert(mt.end(), tr.mt.begin(), tr.mt.end());
      }
      in.carried.obj = tape.constant({k, d}, obj);
      if (cfg.has_motion_decoder()) in.carried.mt = tape.constant({k, d}, mt);
      // Provenance: each carried ref must be bit-equal to the s_1 its slot produced.
      const auto slots = tracks.slots();
      for (std::size_t i = 0; i < k; ++i) {
        ++out.propagated;
        if (in.carried.refs[i] != prev_s1.at(slots[i])) out.propagation_exact = false;
      }
    }
    const auto fo = m.forward(tape, in);
    for (std::size_t i = 0; i < k; ++i)
      if (fo.layers[0].ref_in[i] != in.carried.refs[i]) out.propagation_exact = false;
    for (const auto& lo : fo.layers) {
      if (!cfg.has_motion_decoder()) break;
      if (lo.motion_refs.size() != lo.ref_export.size() + 1) out.motion_refs_shared = false;
      for (std::size_t i = 0; i < lo.ref_export.size(); ++i)
        if (lo.motion_refs[i] != lo.ref_export[i]) out.motion_refs_shared = false;
    }
    if (fo.schedule != expected_schedule(cfg.layers, cfg.has_motion_decoder())) out.schedule_ok = false;

    prev_s1 = fo.next_references(cfg.past_steps);
    tracker::FrameTracks ft;
    ft.slot_ids = fo.ids;
    const auto& logits = fo.final().boxes.logits;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      // Any monotone score works here; the check only needs some positives.
      const double a = logits.at(r, 0), b = logits.at(r, 1), c = logits.at(r, 2);
      const double mx = std::max({a, b, c});
      const double ea = std::exp(a - mx), eb = std::exp(b - mx), ec = std::exp(c - mx);
      ft.confidences.push_back(std::max(ea, eb) / (ea + eb + ec));
    }
    ft.next_refs = prev_s1;
    ft.positives = tracker::select_positives(ft.confidences, policy, std::nullopt);
    for (std::size_t r = 0; r < cfg.num_obj; ++r) {
      ft.obj.emplace_back(fo.obj.value().begin() + static_cast<std::ptrdiff_t>(r * d),
                          fo.obj.value().begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
      if (cfg.has_motion_decoder())
        ft.mt.emplace_back(fo.mt.value().begin() + static_cast<std::ptrdiff_t>(r * d),
                           fo.mt.value().begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
      else
        ft.mt.emplace_back(d, 0.0);
    }
    tracks.update(ft, policy);
    ++out.frames;
  }
  return out;
}

}  // namespace dmad::testing
