#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "dmad/model/layers.hpp"

namespace dmad::tracker {

using model::Point3;
using model::Points;

enum class Mode { kTraining, kInference };

struct PropagationPolicy {
  Mode mode = Mode::kInference;
  double tau = 0.35;
  // A track is retired once it has missed more than this many consecutive frames.
  int max_misses = 2;
  std::size_t max_tracks = 32;

  void validate() const;
};

// Training: exactly the matched query indices (sorted). Inference: indices
// whose confidence exceeds tau. Training without a match result throws.
std::vector<std::size_t> select_positives(std::span<const double> confidences, const PropagationPolicy& policy,
                                          const std::optional<std::vector<std::size_t>>& matched);

struct Track {
  int id = -1;
  std::vector<double> obj;  // object query embedding
  std::vector<double> mt;   // paired motion query embedding
  Point3 ref{};             // next-frame reference point (s_1)
  int age = 0;
  double confidence = 0.0;
  int misses = 0;
  int gt_id = -1;           // training only: the instance this track follows
  std::size_t slot = 0;     // query slot in the frame that produced it
};

// Per-slot view of one decoded frame handed to TrackSet::update.
struct FrameTracks {
  std::vector<int> slot_ids;         // -1 for fresh slots
  std::vector<double> confidences;
  Points next_refs;                  // s_1 per slot
  std::vector<std::size_t> positives;
  std::vector<int> gt_ids;           // per slot, training only (may be empty)
  std::vector<std::vector<double>> obj;  // per-slot embeddings (may be empty)
  std::vector<std::vector<double>> mt;
};

struct UpdateResult {
  std::vector<int> slot_ids;  // id of every positive slot after assignment, -1 elsewhere
  std::size_t born = 0;
  std::size_t retired = 0;
  std::size_t capped = 0;     // tracks dropped by the slot cap
};

class TrackSet {
 public:
  // Tracks in the order they occupy query slots in the next frame.
  const std::vector<Track>& tracks() const { return tracks_; }
  std::size_t size() const { return tracks_.size(); }
  bool empty() const { return tracks_.empty(); }
  int next_id() const { return next_id_; }

  UpdateResult update(const FrameTracks& frame, const PropagationPolicy& policy);

  Points refs() const;
  std::vector<int> ids() const;
  std::vector<std::size_t> slots() const;
  const Track* find(int id) const;

 private:
  std::vector<Track> tracks_;
  int next_id_ = 0;
};

}  // namespace dmad::tracker
