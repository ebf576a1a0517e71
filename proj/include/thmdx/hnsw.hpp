#pragma once

// Hierarchical Navigable Small World graph (Malkov & Yashunin).
//
// The graph stores only topology; distances come from caller-supplied
// functors, so the same structure serves any metric. Node ids are dense
// and assigned in insertion order. All orderings use (distance, node id)
// so construction and search are deterministic for a fixed seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <queue>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "thmdx/error.hpp"

namespace thmdx {

struct HnswParams {
  std::size_t m = 16;
  std::size_t ef_construction = 200;
  std::size_t ef_search = 200;
  std::uint64_t rng_seed = 42;

  void validate() const {
    if (m < 2) throw Error(ErrorCode::InvalidArgument, "hnsw m must be >= 2");
    if (ef_construction < m) throw Error(ErrorCode::InvalidArgument, "ef_construction must be >= m");
    if (ef_search < 1) throw Error(ErrorCode::InvalidArgument, "ef_search must be >= 1");
  }

  friend bool operator==(const HnswParams&, const HnswParams&) = default;
};

template <class Dist>
class HnswGraph {
 public:
  using NodeId = std::uint32_t;
  using Neighbor = std::pair<Dist, NodeId>;
  static constexpr NodeId kNone = std::numeric_limits<NodeId>::max();

  explicit HnswGraph(HnswParams params = {})
      : params_(params), level_mult_(1.0 / std::log(static_cast<double>(params.m))), rng_(params.rng_seed) {
    params_.validate();
  }

  const HnswParams& params() const { return params_; }
  std::size_t size() const { return links_.size(); }
  bool empty() const { return links_.empty(); }
  NodeId entry_point() const { return entry_; }
  int max_level() const { return max_level_; }
  int level(NodeId n) const { return static_cast<int>(links_[n].size()) - 1; }
  const std::vector<NodeId>& neighbors(NodeId n, int layer) const { return links_[n][layer]; }

  /// Adds node `size()`. `between(a, b)` gives the distance between two
  /// stored nodes; the new node must already be addressable through it.
  void insert(const std::function<Dist(NodeId, NodeId)>& between) {
    const auto q = static_cast<NodeId>(links_.size());
    const int lvl = draw_level();
    links_.emplace_back(static_cast<std::size_t>(lvl) + 1);
    visited_.push_back(0);
    if (q == 0) {
      entry_ = q;
      max_level_ = lvl;
      return;
    }
    auto to_q = [&](NodeId n) { return between(q, n); };
    NodeId ep = entry_;
    Dist ep_dist = to_q(ep);
    for (int layer = max_level_; layer > lvl; --layer) greedy_step(to_q, ep, ep_dist, layer);

    std::vector<Neighbor> entry_points{{ep_dist, ep}};
    for (int layer = std::min(lvl, max_level_); layer >= 0; --layer) {
      EpochVisited visited{*this};
      auto found = search_layer(to_q, entry_points, params_.ef_construction, layer, visited);
      auto selected = select_neighbors(found, max_links(layer), between);
      auto& own = links_[q][layer];
      own.clear();
      for (const auto& [d, n] : selected) own.push_back(n);
      for (const auto& [d, n] : selected) connect(n, q, layer, between);
      entry_points = std::move(found);
    }
    if (lvl > max_level_) {
      max_level_ = lvl;
      entry_ = q;
    }
  }

  /// Up to k nearest nodes by (distance, id), searching layer 0 with beam `ef`.
  std::vector<Neighbor> search(const std::function<Dist(NodeId)>& to_query, std::size_t k, std::size_t ef) const {
    if (links_.empty() || k == 0) return {};
    NodeId ep = entry_;
    Dist ep_dist = to_query(ep);
    for (int layer = max_level_; layer > 0; --layer) greedy_step(to_query, ep, ep_dist, layer);
    HashVisited visited;
    auto found = search_layer(to_query, {{ep_dist, ep}}, std::max(ef, k), 0, visited);
    if (found.size() > k) found.resize(k);
    return found;
  }

  /// Length-prefixed little-endian serialization:
  /// u32 entry, i32 max_level, u32 count, then per node u32 level and for
  /// each layer 0..level a u32 neighbor count followed by u32 ids.
  std::string serialize() const {
    std::string out;
    put_u32(out, entry_);
    put_u32(out, static_cast<std::uint32_t>(max_level_));
    put_u32(out, static_cast<std::uint32_t>(links_.size()));
    for (const auto& node : links_) {
      put_u32(out, static_cast<std::uint32_t>(node.size() - 1));
      for (const auto& layer : node) {
        put_u32(out, static_cast<std::uint32_t>(layer.size()));
        for (NodeId n : layer) put_u32(out, n);
      }
    }
    return out;
  }

  void deserialize(std::string_view data) {
    std::size_t pos = 0;
    auto get = [&]() -> std::uint32_t {
      if (pos + 4 > data.size()) throw Error(ErrorCode::ChecksumMismatch, "graph data truncated");
      std::uint32_t v = 0;
      for (int b = 0; b < 4; ++b) v |= std::uint32_t(static_cast<unsigned char>(data[pos + b])) << (8 * b);
      pos += 4;
      return v;
    };
    entry_ = get();
    max_level_ = static_cast<std::int32_t>(get());
    std::uint32_t count = get();
    links_.assign(count, {});
    for (auto& node : links_) {
      std::uint32_t lvl = get();
      if (lvl > 64) throw Error(ErrorCode::ChecksumMismatch, "implausible node level in graph data");
      node.resize(lvl + 1);
      for (auto& layer : node) {
        std::uint32_t n = get();
        if (n > count) throw Error(ErrorCode::ChecksumMismatch, "implausible neighbor count in graph data");
        layer.resize(n);
        for (auto& id : layer) {
          id = get();
          if (id >= count) throw Error(ErrorCode::ChecksumMismatch, "neighbor id out of range");
        }
      }
    }
    if (pos != data.size()) throw Error(ErrorCode::ChecksumMismatch, "trailing bytes in graph data");
    visited_.assign(count, 0);
    epoch_ = 0;
  }

  std::string rng_state() const {
    std::ostringstream os;
    os << rng_;
    return os.str();
  }

  void set_rng_state(const std::string& state) {
    std::istringstream is(state);
    is >> rng_;
    if (!is) throw Error(ErrorCode::ChecksumMismatch, "bad rng state");
  }

 private:
  std::size_t max_links(int layer) const { return layer == 0 ? 2 * params_.m : params_.m; }

  int draw_level() {
    // u in (0, 1], independent of std distribution implementations.
    double u = (static_cast<double>(rng_() >> 11) + 1.0) * 0x1.0p-53;
    return static_cast<int>(std::floor(-std::log(u) * level_mult_));
  }

  template <class ToQuery>
  void greedy_step(const ToQuery& to_query, NodeId& ep, Dist& ep_dist, int layer) const {
    bool changed = true;
    while (changed) {
      changed = false;
      for (NodeId n : links_[ep][layer]) {
        Dist d = to_query(n);
        if (Neighbor{d, n} < Neighbor{ep_dist, ep}) {
          ep = n;
          ep_dist = d;
          changed = true;
        }
      }
    }
  }

  // Visit marks during construction (single writer): epoch-stamped array.
  struct EpochVisited {
    HnswGraph& g;
    std::uint32_t epoch;
    explicit EpochVisited(HnswGraph& graph) : g(graph), epoch(graph.next_epoch()) {}
    bool mark(NodeId n) {
      if (g.visited_[n] == epoch) return false;
      g.visited_[n] = epoch;
      return true;
    }
  };

  // Visit marks during queries: per-call, so concurrent readers never share state.
  struct HashVisited {
    std::unordered_set<NodeId> seen;
    bool mark(NodeId n) { return seen.insert(n).second; }
  };

  /// Beam search on one layer; returns up to ef nodes ascending by (distance, id).
  template <class ToQuery, class Visited>
  std::vector<Neighbor> search_layer(const ToQuery& to_query, const std::vector<Neighbor>& entry_points,
                                     std::size_t ef, int layer, Visited& visited) const {
    std::priority_queue<Neighbor, std::vector<Neighbor>, std::greater<>> candidates;
    std::priority_queue<Neighbor> best;
    for (const auto& ep : entry_points) {
      if (!visited.mark(ep.second)) continue;
      candidates.push(ep);
      best.push(ep);
      if (best.size() > ef) best.pop();
    }
    while (!candidates.empty()) {
      Neighbor c = candidates.top();
      if (best.size() >= ef && best.top().first < c.first) break;
      candidates.pop();
      if (layer >= static_cast<int>(links_[c.second].size())) continue;
      for (NodeId n : links_[c.second][layer]) {
        if (!visited.mark(n)) continue;
        Neighbor e{to_query(n), n};
        if (best.size() < ef || e < best.top()) {
          candidates.push(e);
          best.push(e);
          if (best.size() > ef) best.pop();
        }
      }
    }
    std::vector<Neighbor> out(best.size());
    for (auto i = out.size(); i-- > 0;) {
      out[i] = best.top();
      best.pop();
    }
    return out;
  }

  /// Diversity heuristic: keep a candidate only if it is closer to the base
  /// than to every neighbor already kept; remaining slots are filled with the
  /// closest pruned candidates. `candidates` must be sorted ascending.
  template <class Between>
  std::vector<Neighbor> select_neighbors(const std::vector<Neighbor>& candidates, std::size_t m,
                                         const Between& between) const {
    if (candidates.size() <= m) return candidates;
    std::vector<Neighbor> kept;
    std::vector<Neighbor> pruned;
    for (const auto& c : candidates) {
      if (kept.size() >= m) break;
      bool diverse = true;
      for (const auto& k : kept) {
        if (between(c.second, k.second) < c.first) {
          diverse = false;
          break;
        }
      }
      (diverse ? kept : pruned).push_back(c);
    }
    for (std::size_t i = 0; i < pruned.size() && kept.size() < m; ++i) kept.push_back(pruned[i]);
    std::sort(kept.begin(), kept.end());
    return kept;
  }

  template <class Between>
  void connect(NodeId from, NodeId to, int layer, const Between& between) {
    auto& list = links_[from][layer];
    list.push_back(to);
    if (list.size() <= max_links(layer)) return;
    std::vector<Neighbor> scored;
    scored.reserve(list.size());
    for (NodeId n : list) scored.emplace_back(between(from, n), n);
    std::sort(scored.begin(), scored.end());
    auto selected = select_neighbors(scored, max_links(layer), between);
    list.clear();
    for (const auto& [d, n] : selected) list.push_back(n);
  }

  std::uint32_t next_epoch() {
    if (++epoch_ == 0) {
      std::fill(visited_.begin(), visited_.end(), 0);
      epoch_ = 1;
    }
    return epoch_;
  }

  static void put_u32(std::string& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
  }

  HnswParams params_;
  double level_mult_;
  std::mt19937_64 rng_;
  std::vector<std::vector<std::vector<NodeId>>> links_;
  NodeId entry_ = kNone;
  int max_level_ = -1;
  std::vector<std::uint32_t> visited_;
  std::uint32_t epoch_ = 0;
};

}  // namespace thmdx
