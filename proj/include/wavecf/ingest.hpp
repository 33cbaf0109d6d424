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

#ifndef WAVECF_INGEST_HPP_
#define WAVECF_INGEST_HPP_

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "core.hpp"

namespace wavecf {

struct RawInteraction {
  std::string user_id;
  std::string item_id;
  std::optional<double> weight;
  std::optional<std::int64_t> timestamp;
};

struct Interaction {
  std::uint32_t user;
  std::uint32_t item;
  friend bool operator==(const Interaction&, const Interaction&) = default;
  friend auto operator<=>(const Interaction&, const Interaction&) = default;
};

/**
 * Binary implicit-feedback matrix with its id maps.
 *
 * Pairs are kept sorted by (user, item) and unique. Train/test splits of one
 * dataset share the parent's index space, so a split side may contain users
 * or items without any pair; the filtered parent never does.
 */
struct InteractionSet {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<Interaction> pairs;
  std::vector<std::string> user_ids;  // index -> external id
  std::vector<std::string> item_ids;
  std::unordered_map<std::string, std::uint32_t> user_index;
  std::unordered_map<std::string, std::uint32_t> item_index;
  std::uint64_t seed = 0;  // split seed this set came from; 0 if unsplit

  std::size_t nnz() const { return pairs.size(); }

  std::vector<std::vector<std::uint32_t>> items_by_user() const {
    std::vector<std::vector<std::uint32_t>> out(num_users);
    for (const auto& p : pairs) out[p.user].push_back(p.item);
    return out;
  }

  std::vector<std::size_t> user_degrees() const {
    std::vector<std::size_t> d(num_users, 0);
    for (const auto& p : pairs) ++d[p.user];
    return d;
  }

  std::vector<std::size_t> item_degrees() const {
    std::vector<std::size_t> d(num_items, 0);
    for (const auto& p : pairs) ++d[p.item];
    return d;
  }

  bool contains(std::uint32_t u, std::uint32_t i) const {
    return std::binary_search(pairs.begin(), pairs.end(), Interaction{u, i});
  }

  bool has_orphans() const {
    auto du = user_degrees();
    auto di = item_degrees();
    return std::count(du.begin(), du.end(), 0u) > 0 ||
           std::count(di.begin(), di.end(), 0u) > 0;
  }

  friend bool operator==(const InteractionSet& a, const InteractionSet& b) {
    return a.num_users == b.num_users && a.num_items == b.num_items &&
           a.pairs == b.pairs && a.user_ids == b.user_ids &&
           a.item_ids == b.item_ids && a.seed == b.seed;
  }
};

/// Sorts and deduplicates pairs, rebuilds the reverse id maps.
inline InteractionSet make_interaction_set(std::vector<Interaction> pairs,
                                           std::vector<std::string> user_ids,
                                           std::vector<std::string> item_ids,
                                           std::uint64_t seed = 0) {
  InteractionSet s;
  s.num_users = user_ids.size();
  s.num_items = item_ids.size();
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  for (const auto& p : pairs) {
    if (p.user >= s.num_users || p.item >= s.num_items)
      throw DataError("interaction index out of range");
  }
  s.pairs = std::move(pairs);
  s.user_ids = std::move(user_ids);
  s.item_ids = std::move(item_ids);
  s.seed = seed;
  for (std::uint32_t u = 0; u < s.num_users; ++u) {
    if (!s.user_index.emplace(s.user_ids[u], u).second)
      throw DataError("duplicate user id '" + s.user_ids[u] + "'");
  }
  for (std::uint32_t i = 0; i < s.num_items; ++i) {
    if (!s.item_index.emplace(s.item_ids[i], i).second)
      throw DataError("duplicate item id '" + s.item_ids[i] + "'");
  }
  return s;
}

/// Same index space as `parent`, different pair set.
inline InteractionSet with_pairs(const InteractionSet& parent,
                                 std::vector<Interaction> pairs,
                                 std::uint64_t seed) {
  InteractionSet s;
  s.num_users = parent.num_users;
  s.num_items = parent.num_items;
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  s.pairs = std::move(pairs);
  s.user_ids = parent.user_ids;
  s.item_ids = parent.item_ids;
  s.user_index = parent.user_index;
  s.item_index = parent.item_index;
  s.seed = seed;
  return s;
}

enum class Delimiter { detect, tab, comma, double_colon };

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line,
                                                  Delimiter d) {
  std::vector<std::string_view> out;
  const std::string_view sep = d == Delimiter::tab     ? "\t"
                               : d == Delimiter::comma ? ","
                                                       : "::";
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + sep.size();
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline Delimiter detect_delimiter(std::string_view line) {
  if (line.find('\t') != std::string_view::npos) return Delimiter::tab;
  if (line.find("::") != std::string_view::npos) return Delimiter::double_colon;
  return Delimiter::comma;
}

}  // namespace detail

/**
 * Parses delimiter-separated rows "user item [rating] [timestamp]".
 * Blank lines and lines starting with '#' are skipped. With
 * Delimiter::detect the first data row picks tab, "::" or comma for the
 * whole stream.
 */
inline std::vector<RawInteraction> parse_interactions(
    std::istream& in, Delimiter delim = Delimiter::detect) {
  std::vector<RawInteraction> out;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& why) {
    throw DataError("line " + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = detail::trim(line);
    if (view.empty() || view.front() == '#') continue;
    if (delim == Delimiter::detect) delim = detail::detect_delimiter(view);
    auto fields = detail::split_fields(view, delim);
    if (fields.size() < 2) fail("expected at least two columns (user, item)");
    if (fields.size() > 4) fail("expected at most four columns");
    RawInteraction r;
    auto user = detail::trim(fields[0]);
    auto item = detail::trim(fields[1]);
    if (user.empty() || item.empty()) fail("empty user or item id");
    r.user_id = std::string(user);
    r.item_id = std::string(item);
    if (fields.size() >= 3) {
      auto f = detail::trim(fields[2]);
      double w = 0;
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), w);
      if (ec != std::errc() || p != f.data() + f.size())
        fail("bad rating '" + std::string(f) + "'");
      r.weight = w;
    }
    if (fields.size() == 4) {
      auto f = detail::trim(fields[3]);
      std::int64_t ts = 0;
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), ts);
      if (ec != std::errc() || p != f.data() + f.size())
        fail("bad timestamp '" + std::string(f) + "'");
      r.timestamp = ts;
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<RawInteraction> load_interactions(
    const std::string& path, Delimiter delim = Delimiter::detect) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read '" + path + "'");
  try {
    return parse_interactions(in, delim);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

/**
 * Binarizes and keeps the largest sub-dataset in which every user has at
 * least `min_user` distinct items and every item at least `min_item`
 * distinct users. Peeling runs to a fixed point; the result is independent
 * of peeling order. Indices are assigned in order of first appearance.
 */
inline InteractionSet filter_by_activity(const std::vector<RawInteraction>& raw,
                                         std::size_t min_user,
                                         std::size_t min_item) {
  if (min_user < 1 || min_item < 1)
    throw ConfigError("activity thresholds must be >= 1");

  std::unordered_map<std::string, std::uint32_t> uidx, iidx;
  std::vector<std::string> uname, iname;
  std::vector<Interaction> pairs;
  pairs.reserve(raw.size());
  for (const auto& r : raw) {
    auto [uit, unew] = uidx.emplace(r.user_id, static_cast<std::uint32_t>(uname.size()));
    if (unew) uname.push_back(r.user_id);
    auto [iit, inew] = iidx.emplace(r.item_id, static_cast<std::uint32_t>(iname.size()));
    if (inew) iname.push_back(r.item_id);
    pairs.push_back({uit->second, iit->second});
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

  std::vector<char> user_alive(uname.size(), 1), item_alive(iname.size(), 1);
  while (true) {
    std::vector<std::size_t> du(uname.size(), 0), di(iname.size(), 0);
    for (const auto& p : pairs) {
      ++du[p.user];
      ++di[p.item];
    }
    bool changed = false;
    for (std::size_t u = 0; u < du.size(); ++u) {
      if (user_alive[u] && du[u] < min_user) {
        user_alive[u] = 0;
        changed = true;
      }
    }
    for (std::size_t i = 0; i < di.size(); ++i) {
      if (item_alive[i] && di[i] < min_item) {
        item_alive[i] = 0;
        changed = true;
      }
    }
    if (!changed) break;
    std::erase_if(pairs, [&](const Interaction& p) {
      return !user_alive[p.user] || !item_alive[p.item];
    });
  }
  if (pairs.empty()) throw DataError("dataset fully filtered");

  // Provisional indices already follow first appearance, so compacting the
  // survivors in index order preserves it.
  std::vector<std::uint32_t> unew(uname.size()), inew(iname.size());
  std::vector<std::string> users, items;
  for (std::size_t u = 0; u < uname.size(); ++u) {
    if (user_alive[u]) {
      unew[u] = static_cast<std::uint32_t>(users.size());
      users.push_back(uname[u]);
    }
  }
  for (std::size_t i = 0; i < iname.size(); ++i) {
    if (item_alive[i]) {
      inew[i] = static_cast<std::uint32_t>(items.size());
      items.push_back(iname[i]);
    }
  }
  for (auto& p : pairs) p = {unew[p.user], inew[p.item]};
  return make_interaction_set(std::move(pairs), std::move(users), std::move(items));
}

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  std::optional<std::size_t> per_user_cap;
};

struct Split {
  InteractionSet train;
  InteractionSet test;
};

/// Number of training items for a user with n interactions.
inline std::size_t train_count(std::size_t n, double fraction) {
  if (n <= 1) return n;
  auto k = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction + 1e-9));
  return std::clamp<std::size_t>(k, 1, n - 1);
}

/**
 * Per-user random partition. A user with a single interaction goes to
 * train only and therefore never appears among the test users. With a
 * per-user cap the training side is further down-sampled (cold-start
 * protocol); the dropped items are in neither side.
 */
inline Split split(const InteractionSet& data, const SplitSpec& spec,
                   std::string_view stream = "split") {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw ConfigError("train_fraction must lie strictly between 0 and 1");
  if (spec.per_user_cap && *spec.per_user_cap == 0)
    throw ConfigError("per_user_cap must be positive");
  Rng rng = make_rng(spec.seed, stream);
  std::vector<Interaction> train, test;
  auto by_user = data.items_by_user();
  for (std::uint32_t u = 0; u < by_user.size(); ++u) {
    auto& items = by_user[u];
    std::shuffle(items.begin(), items.end(), rng);
    std::size_t ntrain = train_count(items.size(), spec.train_fraction);
    std::size_t keep = ntrain;
    if (spec.per_user_cap) keep = std::min(keep, *spec.per_user_cap);
    for (std::size_t k = 0; k < keep; ++k) train.push_back({u, items[k]});
    for (std::size_t k = ntrain; k < items.size(); ++k) test.push_back({u, items[k]});
  }
  return {with_pairs(data, std::move(train), spec.seed),
          with_pairs(data, std::move(test), spec.seed)};
}

// ---------------------------------------------------------------------------
// Canonical persisted form:
//   wavelet-cf-dataset v1 M K NNZ seed
//   u<TAB>i            (NNZ lines, sorted)
//   users M            (then M ids, one per line, by index)
//   items K            (then K ids)

inline constexpr std::string_view kDatasetMagic = "wavelet-cf-dataset";
inline constexpr int kDatasetVersion = 1;

inline void write_canonical(std::ostream& out, const InteractionSet& d) {
  out << kDatasetMagic << " v" << kDatasetVersion << ' ' << d.num_users << ' '
      << d.num_items << ' ' << d.nnz() << ' ' << d.seed << '\n';
  for (const auto& p : d.pairs) out << p.user << '\t' << p.item << '\n';
  out << "users " << d.num_users << '\n';
  for (const auto& id : d.user_ids) out << id << '\n';
  out << "items " << d.num_items << '\n';
  for (const auto& id : d.item_ids) out << id << '\n';
}

inline std::string to_canonical_string(const InteractionSet& d) {
  std::ostringstream os;
  write_canonical(os, d);
  return os.str();
}

inline std::uint64_t content_hash(const InteractionSet& d) {
  return fnv1a(to_canonical_string(d));
}

inline InteractionSet read_canonical(std::istream& in) {
  auto truncated = [] { return DataError("truncated dataset file"); };
  std::string line;
  if (!std::getline(in, line)) throw truncated();
  std::istringstream header(line);
  std::string magic, version;
  std::size_t m = 0, k = 0, nnz = 0;
  std::uint64_t seed = 0;
  header >> magic >> version;
  if (magic != kDatasetMagic) throw DataError("not a wavelet-cf dataset file");
  if (version != "v" + std::to_string(kDatasetVersion))
    throw DataError("unsupported dataset version '" + version + "' (expected v" +
                    std::to_string(kDatasetVersion) + ")");
  if (!(header >> m >> k >> nnz >> seed)) throw DataError("malformed dataset header");
  if (m == 0 || k == 0)
    throw DataError("dataset fully filtered: header declares no users or items");

  std::vector<Interaction> pairs;
  pairs.reserve(nnz);
  for (std::size_t n = 0; n < nnz; ++n) {
    if (!std::getline(in, line)) throw truncated();
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("malformed pair line " + std::to_string(n + 2));
    std::uint32_t u = 0, i = 0;
    auto r1 = std::from_chars(line.data(), line.data() + tab, u);
    auto r2 = std::from_chars(line.data() + tab + 1, line.data() + line.size(), i);
    if (r1.ec != std::errc() || r2.ec != std::errc() || r1.ptr != line.data() + tab ||
        r2.ptr != line.data() + line.size() || u >= m || i >= k)
      throw DataError("malformed pair line " + std::to_string(n + 2));
    if (!pairs.empty() && !(pairs.back() < Interaction{u, i}))
      throw DataError("pairs not in canonical order at line " + std::to_string(n + 2));
    pairs.push_back({u, i});
  }
  auto read_section = [&](std::string_view name, std::size_t count) {
    if (!std::getline(in, line)) throw truncated();
    if (line != std::string(name) + " " + std::to_string(count))
      throw DataError("expected '" + std::string(name) + " " + std::to_string(count) + "' section");
    std::vector<std::string> ids(count);
    for (auto& id : ids) {
      if (!std::getline(in, id)) throw truncated();
    }
    return ids;
  };
  auto users = read_section("users", m);
  auto items = read_section("items", k);
  return make_interaction_set(std::move(pairs), std::move(users), std::move(items), seed);
}

inline void save_canonical(const std::string& path, const InteractionSet& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_canonical(out, d);
  if (!out) throw DataError("write failed for '" + path + "'");
}

inline InteractionSet load_canonical(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path + "'");
  try {
    return read_canonical(in);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace wavecf

#endif  // WAVECF_INGEST_HPP_
