#include "surfelmap/pose_graph.hpp"

#include <algorithm>
#include <deque>
#include <stdexcept>
#include <string>

#include "surfelmap/parallel.hpp"

namespace surfelmap {

PoseGraph::PoseGraph(int g_delta) : g_delta_(g_delta) {
  if (g_delta_ < 1) {
    throw std::invalid_argument("G_delta must be at least 1");
  }
}

void PoseGraph::set_g_delta(int g_delta) {
  if (g_delta < 1) {
    throw std::invalid_argument("G_delta must be at least 1");
  }
  g_delta_ = g_delta;
}

const Keyframe& PoseGraph::keyframe(int id) const {
  auto it = keyframes_.find(id);
  if (it == keyframes_.end()) {
    throw std::invalid_argument("unknown keyframe " + std::to_string(id));
  }
  return it->second;
}

Keyframe& PoseGraph::keyframe_mutable(int id) {
  auto it = keyframes_.find(id);
  if (it == keyframes_.end()) {
    throw std::invalid_argument("unknown keyframe " + std::to_string(id));
  }
  return it->second;
}

void PoseGraph::add_keyframe(int id, const Pose& pose) {
  if (has_keyframe(id)) {
    throw std::invalid_argument("duplicate keyframe " + std::to_string(id));
  }
  Keyframe kf;
  kf.id = id;
  kf.current_pose = pose;
  kf.last_deformed_pose = pose;
  keyframes_.emplace(id, kf);
  adjacency_.emplace(id, std::vector<int>{});
}

void PoseGraph::add_edge(int a, int b) {
  if (a == b) {
    throw std::invalid_argument("self-loop edge on keyframe " +
                                std::to_string(a));
  }
  if (!has_keyframe(a) || !has_keyframe(b)) {
    throw std::invalid_argument("edge references unknown keyframe");
  }
  std::vector<int>& na = adjacency_[a];
  auto pos = std::lower_bound(na.begin(), na.end(), b);
  if (pos != na.end() && *pos == b) {
    return;
  }
  na.insert(pos, b);
  std::vector<int>& nb = adjacency_[b];
  nb.insert(std::lower_bound(nb.begin(), nb.end(), a), a);
  ++edge_count_;
}

bool PoseGraph::has_edge(int a, int b) const {
  auto it = adjacency_.find(a);
  if (it == adjacency_.end()) {
    return false;
  }
  return std::binary_search(it->second.begin(), it->second.end(), b);
}

const std::vector<int>& PoseGraph::neighbors(int id) const {
  auto it = adjacency_.find(id);
  if (it == adjacency_.end()) {
    throw std::invalid_argument("unknown keyframe " + std::to_string(id));
  }
  return it->second;
}

void PoseGraph::set_current_pose(int id, const Pose& pose) {
  Keyframe& kf = keyframe_mutable(id);
  kf.current_pose = pose;
  if (kf.current_pose != kf.last_deformed_pose) {
    dirty_.insert(id);
  } else {
    dirty_.erase(id);
  }
}

void PoseGraph::mark_deformed(int id) {
  Keyframe& kf = keyframe_mutable(id);
  kf.last_deformed_pose = kf.current_pose;
  dirty_.erase(id);
}

void MapDatabase::append(const Surfel& surfel) {
  groups_[surfel.attached_keyframe].push_back(surfel);
  ++size_;
}

std::vector<Surfel> MapDatabase::take_group(int keyframe_id) {
  auto it = groups_.find(keyframe_id);
  if (it == groups_.end()) {
    return {};
  }
  std::vector<Surfel> out = std::move(it->second);
  groups_.erase(it);
  size_ -= out.size();
  return out;
}

void MapDatabase::transform_group(int keyframe_id, const Pose& transform) {
  auto it = groups_.find(keyframe_id);
  if (it == groups_.end()) {
    return;
  }
  for (Surfel& s : it->second) {
    s.position = transform.transform_point(s.position);
    s.normal = transform.transform_vector(s.normal);
  }
}

void apply_graph_update(PoseGraph& graph, const GraphUpdate& update) {
  for (const Keyframe& kf : update.new_keyframes) {
    graph.add_keyframe(kf.id, kf.current_pose);
  }
  for (const auto& [a, b] : update.new_edges) {
    graph.add_edge(a, b);
  }
  for (const auto& [id, pose] : update.optimized_poses) {
    graph.set_current_pose(id, pose);
  }
}

void deform_map(MapDatabase& map, PoseGraph& graph, int threads) {
  const std::vector<int> dirty(graph.dirty().begin(), graph.dirty().end());
  if (dirty.empty()) {
    return;
  }
  std::vector<Pose> transforms(dirty.size());
  for (std::size_t i = 0; i < dirty.size(); ++i) {
    const Keyframe& kf = graph.keyframe(dirty[i]);
    transforms[i] = kf.current_pose * kf.last_deformed_pose.inverse();
  }
  parallel_for_blocks(dirty.size(), threads,
                      [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      map.transform_group(dirty[i], transforms[i]);
    }
  });
  for (int id : dirty) {
    graph.mark_deformed(id);
  }
}

std::vector<int> locally_consistent_keyframes(const PoseGraph& graph,
                                              int ref_id) {
  if (!graph.has_keyframe(ref_id)) {
    throw std::invalid_argument("unknown keyframe " + std::to_string(ref_id));
  }
  std::map<int, int> distance;
  distance[ref_id] = 0;
  std::deque<int> queue{ref_id};
  while (!queue.empty()) {
    const int id = queue.front();
    queue.pop_front();
    const int next = distance[id] + 1;
    if (next >= graph.g_delta()) {
      continue;
    }
    for (int nb : graph.neighbors(id)) {
      if (distance.emplace(nb, next).second) {
        queue.push_back(nb);
      }
    }
  }
  std::vector<int> ids;
  ids.reserve(distance.size());
  for (const auto& [id, dist] : distance) {
    ids.push_back(id);
  }
  return ids;
}

std::vector<Surfel> extract_local_map(MapDatabase& map, const PoseGraph& graph,
                                      int ref_id) {
  if (!graph.dirty().empty()) {
    throw std::runtime_error("deform before extract");
  }
  std::vector<Surfel> local;
  for (int id : locally_consistent_keyframes(graph, ref_id)) {
    std::vector<Surfel> group = map.take_group(id);
    local.insert(local.end(), std::make_move_iterator(group.begin()),
                 std::make_move_iterator(group.end()));
  }
  return local;
}

void insert_surfels(MapDatabase& map, const PoseGraph& graph,
                    std::span<const Surfel> surfels) {
  for (const Surfel& s : surfels) {
    if (!graph.has_keyframe(s.attached_keyframe)) {
      throw std::invalid_argument("surfel attached to unknown keyframe " +
                                  std::to_string(s.attached_keyframe));
    }
  }
  for (const Surfel& s : surfels) {
    map.append(s);
  }
}

}  // namespace surfelmap
