#include "dmad/tracker/tracker.hpp"

#include <algorithm>
#include <stdexcept>

namespace dmad::tracker {

void PropagationPolicy::validate() const {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("propagation threshold must lie in (0,1)");
  if (max_misses < 0) throw std::invalid_argument("max_misses must be nonnegative");
}

std::vector<std::size_t> select_positives(std::span<const double> confidences, const PropagationPolicy& policy,
                                          const std::optional<std::vector<std::size_t>>& matched) {
  std::vector<std::size_t> out;
  if (policy.mode == Mode::kTraining) {
    if (!matched) throw std::invalid_argument("training-mode positives need a match result");
    out = *matched;
    std::sort(out.begin(), out.end());
    for (auto i : out)
      if (i >= confidences.size()) throw std::out_of_range("matched index outside the query set");
    return out;
  }
  for (std::size_t i = 0; i < confidences.size(); ++i)
    if (confidences[i] > policy.tau) out.push_back(i);
  return out;
}

UpdateResult TrackSet::update(const FrameTracks& f, const PropagationPolicy& policy) {
  const std::size_t n = f.slot_ids.size();
  if (f.confidences.size() != n || f.next_refs.size() != n)
    throw std::invalid_argument("track update: per-slot arrays differ in length");
  std::vector<bool> positive(n, false);
  for (auto i : f.positives) positive.at(i) = true;

  UpdateResult res;
  res.slot_ids.assign(n, -1);
  std::vector<Track> next;
  for (std::size_t s = 0; s < n; ++s) {
    const int id = f.slot_ids[s];
    Track t;
    if (id >= 0) {
      const Track* old = find(id);
      if (old == nullptr) throw std::invalid_argument("track update: slot carries an unknown id");
      t = *old;
      if (positive[s]) {
        t.misses = 0;
      } else if (++t.misses > policy.max_misses) {
        ++res.retired;
        continue;
      }
      ++t.age;
    } else if (positive[s]) {
      t.id = next_id_++;
      t.age = 1;
      ++res.born;
    } else {
      continue;
    }
    if (positive[s]) res.slot_ids[s] = t.id;
    t.slot = s;
    t.ref = f.next_refs[s];
    t.confidence = f.confidences[s];
    if (!f.gt_ids.empty() && f.gt_ids[s] >= 0) t.gt_id = f.gt_ids[s];
    if (!f.obj.empty()) t.obj = f.obj[s];
    if (!f.mt.empty()) t.mt = f.mt[s];
    next.push_back(std::move(t));
  }
  if (next.size() > policy.max_tracks) {
    // Keep the most confident tracks; ties keep slot order.
    std::stable_sort(next.begin(), next.end(),
                     [](const Track& a, const Track& b) { return a.confidence > b.confidence; });
    res.capped = next.size() - policy.max_tracks;
    next.resize(policy.max_tracks);
    std::stable_sort(next.begin(), next.end(), [](const Track& a, const Track& b) { return a.slot < b.slot; });
  }
  tracks_ = std::move(next);
  return res;
}

Points TrackSet::refs() const {
  Points out;
  for (const auto& t : tracks_) out.push_back(t.ref);
  return out;
}

std::vector<int> TrackSet::ids() const {
  std::vector<int> out;
  for (const auto& t : tracks_) out.push_back(t.id);
  return out;
}

std::vector<std::size_t> TrackSet::slots() const {
  std::vector<std::size_t> out;
  for (const auto& t : tracks_) out.push_back(t.slot);
  return out;
}

const Track* TrackSet::find(int id) const {
  for (const auto& t : tracks_)
    if (t.id == id) return &t;
  return nullptr;
}

}  // namespace dmad::tracker
