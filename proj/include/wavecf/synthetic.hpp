/**
 * Copyright (c) 2026 The wavecf Authors.
 *     All rights reserved.
 *
 *  Licensed under the Apache License, Version 2.0 (the "License");
 *  you may not use this file except in compliance with the License.
 *  You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 *  Unless required by applicable law or agreed to in writing,
 *  software distributed under the License is distributed on an "AS
 *  IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either
 *  express or implied.  See the License for the specific language
 *  governing permissions and limitations under the License.
 */

#ifndef WAVECF_SYNTHETIC_HPP_
#define WAVECF_SYNTHETIC_HPP_

#include <set>
#include <string>
#include <vector>

#include "core.hpp"
#include "ingest.hpp"

namespace wavecf {

/**
 * Block-structured implicit feedback. Users and items are divided evenly
 * into clusters; each user has a taste center inside its cluster's item
 * range and draws most interactions from a window around it (wrapping
 * inside the cluster). A `noise` fraction of draws is uniform over the
 * whole catalog.
 */
struct SyntheticSpec {
  std::size_t users = 300;
  std::size_t items = 200;
  std::size_t clusters = 2;
  std::size_t min_per_user = 20;
  std::size_t max_per_user = 30;
  std::size_t window = 30;
  double noise = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    if (clusters < 1 || users < clusters || items < clusters)
      throw ConfigError("synthetic: need at least one user and item per cluster");
    if (min_per_user < 1 || min_per_user > max_per_user)
      throw ConfigError("synthetic: need 1 <= min_per_user <= max_per_user");
    const std::size_t per_cluster = items / clusters;
    if (window < 1 || window > per_cluster)
      throw ConfigError("synthetic: window must lie in [1, items per cluster]");
    if (max_per_user > window)
      throw ConfigError("synthetic: max_per_user cannot exceed the window");
    if (!(noise >= 0 && noise < 1)) throw ConfigError("synthetic: noise must lie in [0, 1)");
  }
};

inline std::size_t synthetic_cluster_of_user(const SyntheticSpec& s, std::size_t u) {
  return std::min(s.clusters - 1, u * s.clusters / s.users);
}

inline std::size_t synthetic_cluster_of_item(const SyntheticSpec& s, std::size_t i) {
  return std::min(s.clusters - 1, i * s.clusters / s.items);
}

inline InteractionSet make_synthetic(const SyntheticSpec& s) {
  s.validate();
  Rng rng = make_rng(s.seed, "synthetic");
  std::vector<std::size_t> first(s.clusters + 1);
  for (std::size_t c = 0; c <= s.clusters; ++c) first[c] = c * s.items / s.clusters;

  std::set<std::pair<std::uint32_t, std::uint32_t>> edges;
  std::vector<std::size_t> item_count(s.items, 0);
  std::uniform_int_distribution<std::size_t> count(s.min_per_user, s.max_per_user);
  std::uniform_int_distribution<std::size_t> any_item(0, s.items - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t u = 0; u < s.users; ++u) {
    const std::size_t c = synthetic_cluster_of_user(s, u);
    const std::size_t lo = first[c], span = first[c + 1] - first[c];
    const std::size_t center = lo + std::uniform_int_distribution<std::size_t>(0, span - 1)(rng);
    std::uniform_int_distribution<std::size_t> offset(0, s.window - 1);
    const std::size_t n = count(rng);
    std::set<std::size_t> mine;
    while (mine.size() < n) {
      std::size_t i;
      if (unit(rng) < s.noise) {
        i = any_item(rng);
      } else {
        const std::size_t shift = (center - lo + span - s.window / 2 + offset(rng)) % span;
        i = lo + shift;
      }
      mine.insert(i);
    }
    for (auto i : mine) {
      edges.emplace(static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(i));
      ++item_count[i];
    }
  }
  // Items nobody picked get one interaction from a user of their cluster.
  for (std::size_t i = 0; i < s.items; ++i) {
    if (item_count[i]) continue;
    const std::size_t c = synthetic_cluster_of_item(s, i);
    const std::size_t ulo = c * s.users / s.clusters, uhi = (c + 1) * s.users / s.clusters;
    const std::size_t u = std::uniform_int_distribution<std::size_t>(ulo, uhi - 1)(rng);
    edges.emplace(static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(i));
  }

  std::vector<Interaction> pairs;
  pairs.reserve(edges.size());
  for (auto [u, i] : edges) pairs.push_back({u, i});
  std::vector<std::string> uid, iid;
  for (std::size_t u = 0; u < s.users; ++u) uid.push_back("u" + std::to_string(u));
  for (std::size_t i = 0; i < s.items; ++i) iid.push_back("i" + std::to_string(i));
  return make_interaction_set(std::move(pairs), std::move(uid), std::move(iid), s.seed);
}

/// Tab-separated "user item" rows, readable by load_interactions.
inline void write_interactions_tsv(std::ostream& out, const InteractionSet& d) {
  for (const auto& p : d.pairs) out << d.user_ids[p.user] << '\t' << d.item_ids[p.item] << '\n';
}

}  // namespace wavecf

#endif  // WAVECF_SYNTHETIC_HPP_
