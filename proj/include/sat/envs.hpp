#pragma once

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sat/memory.hpp"
#include "sat/rng.hpp"

namespace sat {

enum class TaskKind {
    NextBallet,
    ShortStay,
    BalletFIFO,
    BalletLIFO,
    BalletMVFO,
    BalletLVFO,
    BalletABA,
    OppositeBallet,
};

inline const char* task_name(TaskKind k) {
    switch (k) {
        case TaskKind::NextBallet: return "next-ballet";
        case TaskKind::ShortStay: return "short-stay";
        case TaskKind::BalletFIFO: return "ballet-fifo";
        case TaskKind::BalletLIFO: return "ballet-lifo";
        case TaskKind::BalletMVFO: return "ballet-mvfo";
        case TaskKind::BalletLVFO: return "ballet-lvfo";
        case TaskKind::BalletABA: return "ballet-aba";
        case TaskKind::OppositeBallet: return "opposite-ballet";
    }
    return "?";
}

inline TaskKind task_from_name(const std::string& name) {
    for (TaskKind k : {TaskKind::NextBallet, TaskKind::ShortStay, TaskKind::BalletFIFO,
                       TaskKind::BalletLIFO, TaskKind::BalletMVFO, TaskKind::BalletLVFO,
                       TaskKind::BalletABA, TaskKind::OppositeBallet})
        if (name == task_name(k)) return k;
    throw std::invalid_argument("unknown task '" + name + "'");
}

inline bool is_strategy_task(TaskKind k) {
    return k == TaskKind::BalletFIFO || k == TaskKind::BalletLIFO || k == TaskKind::BalletMVFO ||
           k == TaskKind::BalletLVFO;
}

/// The strategy whose retained memory answers the task by construction.
inline EvictionStrategy matched_strategy(TaskKind k) {
    switch (k) {
        case TaskKind::BalletFIFO: return EvictionStrategy::FIFO;
        case TaskKind::BalletLIFO: return EvictionStrategy::LIFO;
        case TaskKind::BalletMVFO: return EvictionStrategy::MVFO;
        case TaskKind::BalletLVFO: return EvictionStrategy::LVFO;
        default: throw std::invalid_argument("task has no matched strategy");
    }
}

enum class WalkMode { Adjacent, UniformRoom };

struct BalletConfig {
    int grid_w = 3;
    int grid_h = 3;
    int dance_len = 8;
    int num_dancers = 16;
    int num_dances = 8;
    int visits = 18;           // room-stay tasks
    int steps = 128;           // short-stay moves
    WalkMode walk = WalkMode::Adjacent;
    double capacity_ratio = 0.5; // strategy tasks: capacity / episode frames

    int rooms() const { return grid_w * grid_h; }
};

/// Desk-scale defaults per task. Room transitions for the spatial-reasoning
/// tasks (Next/Opposite Ballet) are uniform over the other rooms: an
/// adjacent-room walk leaks the clockwise-next relation through temporal
/// succession, which would let a place-blind model pass the task.
inline BalletConfig default_ballet_config(TaskKind kind) {
    BalletConfig cfg;
    switch (kind) {
        case TaskKind::NextBallet:
        case TaskKind::OppositeBallet:
            cfg.walk = WalkMode::UniformRoom;
            break;
        case TaskKind::ShortStay:
            cfg.steps = 128;
            break;
        case TaskKind::BalletFIFO:
        case TaskKind::BalletLIFO:
        case TaskKind::BalletMVFO:
        case TaskKind::BalletLVFO:
            cfg.num_dancers = 24; // one fresh dancer per stay
            break;
        case TaskKind::BalletABA:
            break;
    }
    return cfg;
}

struct EpisodeStep {
    std::size_t t = 0;
    int place = 0;
    int dancer = 0;
    int dance = 0;
    int phase = 0;
};

struct Episode {
    TaskKind kind = TaskKind::NextBallet;
    std::uint64_t seed = 0;
    std::vector<EpisodeStep> steps;
    int query_dancer = -1;
    int label_dance = -1;
    int num_dances = 8;
    std::size_t capacity_hint = 0; // strategy/ABA tasks

    double chance_accuracy() const { return 1.0 / static_cast<double>(num_dances); }
};

// ---------------------------------------------------------------------------
// 3x3 grid geometry (row-major room indices)

/// Clockwise perimeter ring: 0 -> 1 -> 2 -> 5 -> 8 -> 7 -> 6 -> 3 -> 0.
inline int ring_next_3x3(int room) {
    switch (room) {
        case 0: return 1;
        case 1: return 2;
        case 2: return 5;
        case 5: return 8;
        case 8: return 7;
        case 7: return 6;
        case 6: return 3;
        case 3: return 0;
        default: throw std::invalid_argument("room " + std::to_string(room) + " is not on the ring");
    }
}

/// Point reflection about the center: 0 <-> 8, 1 <-> 7, 2 <-> 6, 3 <-> 5.
inline int opposite_room_3x3(int room) {
    if (room < 0 || room > 8 || room == 4)
        throw std::invalid_argument("room " + std::to_string(room) + " has no opposite");
    return 8 - room;
}

inline std::vector<int> grid_neighbors(int room, int w, int h) {
    const int r = room / w, c = room % w;
    std::vector<int> out;
    if (r > 0) out.push_back(room - w);
    if (r + 1 < h) out.push_back(room + w);
    if (c > 0) out.push_back(room - 1);
    if (c + 1 < w) out.push_back(room + 1);
    return out;
}

// ---------------------------------------------------------------------------
// replay oracle

/// Replays an episode's (time, place) trace through the episodic store under
/// one strategy and returns the retained time indices. The retained set is
/// layout-independent, so a flat store suffices.
inline std::set<std::size_t> replay_retained(const std::vector<EpisodeStep>& steps,
                                             EvictionStrategy sigma, std::size_t capacity,
                                             std::size_t per_place_cap = 0,
                                             MemoryLayout layout = MemoryLayout::Flat,
                                             std::size_t chunk_size = 8) {
    MemoryConfig cfg;
    cfg.layout = layout;
    cfg.capacity = capacity;
    cfg.per_place_cap = per_place_cap;
    cfg.chunk_size = chunk_size;
    EpisodicMemory<float> mem(cfg);
    for (const auto& s : steps) {
        ExperienceFrame<float> f;
        f.time_index = s.t;
        f.place_id = s.place;
        f.meta = {s.dancer, s.dance, s.phase};
        mem.write(f, sigma);
    }
    std::set<std::size_t> out;
    for (const auto& f : mem.frames()) out.insert(f.time_index);
    return out;
}

/// True when at least one frame that reveals the label survives.
inline bool query_answerable(const Episode& ep, const std::set<std::size_t>& retained) {
    int target_room = -1;
    if (ep.kind == TaskKind::NextBallet || ep.kind == TaskKind::OppositeBallet) {
        for (const auto& s : ep.steps)
            if (s.dancer == ep.query_dancer) {
                target_room = ep.kind == TaskKind::NextBallet ? ring_next_3x3(s.place)
                                                              : opposite_room_3x3(s.place);
                break;
            }
    }
    for (const auto& s : ep.steps) {
        if (!retained.count(s.t)) continue;
        if (target_room >= 0) {
            if (s.place == target_room) return true;
        } else if (s.dancer == ep.query_dancer) {
            return true;
        }
    }
    return false;
}

// ---------------------------------------------------------------------------
// generators

namespace detail {

inline constexpr std::uint64_t kTaskSeedTag = 0x5EED;

inline int next_room(Rng& rng, int current, const BalletConfig& cfg) {
    if (cfg.walk == WalkMode::UniformRoom) {
        int r = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.rooms() - 1)));
        return r >= current ? r + 1 : r;
    }
    auto nb = grid_neighbors(current, cfg.grid_w, cfg.grid_h);
    return nb[rng.uniform_int(nb.size())];
}

/// Appends one full dance performance at `room`.
inline void append_stay(std::vector<EpisodeStep>& steps, std::size_t& t, int room, int dancer,
                        int dance, int dance_len) {
    for (int p = 0; p < dance_len; ++p) {
        steps.push_back({t, room, dancer, dance, p});
        ++t;
    }
}

} // namespace detail

inline Episode gen_next_ballet(std::uint64_t seed, const BalletConfig& cfg) {
    if (cfg.grid_w != 3 || cfg.grid_h != 3)
        throw std::invalid_argument("next-ballet: grid must be 3x3");
    if (cfg.num_dancers < cfg.rooms())
        throw std::invalid_argument("next-ballet: need one distinct dancer per room");
    for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
        Rng rng(derive_seed(seed, detail::kTaskSeedTag + 1, attempt));
        auto dancers = rng.sample_distinct(cfg.num_dancers, cfg.rooms());
        std::vector<int> dances(static_cast<std::size_t>(cfg.rooms()));
        for (auto& d : dances) d = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.num_dances)));

        Episode ep;
        ep.kind = TaskKind::NextBallet;
        ep.seed = seed;
        ep.num_dances = cfg.num_dances;
        std::size_t t = 0;
        int room = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.rooms())));
        std::set<int> visited;
        for (int v = 0; v < cfg.visits; ++v) {
            visited.insert(room);
            detail::append_stay(ep.steps, t, room, dancers[static_cast<std::size_t>(room)],
                                dances[static_cast<std::size_t>(room)], cfg.dance_len);
            room = detail::next_room(rng, room, cfg);
        }
        std::vector<int> candidates;
        for (int r : visited) {
            if (r == 4) continue; // queries exclude the center room
            if (visited.count(ring_next_3x3(r))) candidates.push_back(r);
        }
        if (candidates.empty()) continue;
        int qroom = candidates[rng.uniform_int(candidates.size())];
        ep.query_dancer = dancers[static_cast<std::size_t>(qroom)];
        ep.label_dance = dances[static_cast<std::size_t>(ring_next_3x3(qroom))];
        return ep;
    }
    throw std::runtime_error("next-ballet: no valid query pair after 100 attempts");
}

inline Episode gen_short_stay(std::uint64_t seed, const BalletConfig& cfg) {
    if (cfg.num_dancers < cfg.rooms())
        throw std::invalid_argument("short-stay: need one distinct dancer per room");
    Rng rng(derive_seed(seed, detail::kTaskSeedTag + 2));
    auto dancers = rng.sample_distinct(cfg.num_dancers, cfg.rooms());
    std::vector<int> dances(static_cast<std::size_t>(cfg.rooms()));
    for (auto& d : dances) d = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.num_dances)));

    Episode ep;
    ep.kind = TaskKind::ShortStay;
    ep.seed = seed;
    ep.num_dances = cfg.num_dances;
    int room = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.rooms())));
    std::set<int> visited;
    for (int t = 0; t < cfg.steps; ++t) {
        visited.insert(room);
        ep.steps.push_back({static_cast<std::size_t>(t), room, dancers[static_cast<std::size_t>(room)],
                            dances[static_cast<std::size_t>(room)], t % cfg.dance_len});
        // one move attempt per step; wall-blocked moves keep the agent in place
        const int r = room / cfg.grid_w, c = room % cfg.grid_w;
        switch (rng.uniform_int(4)) {
            case 0: if (r > 0) room -= cfg.grid_w; break;
            case 1: if (r + 1 < cfg.grid_h) room += cfg.grid_w; break;
            case 2: if (c > 0) room -= 1; break;
            case 3: if (c + 1 < cfg.grid_w) room += 1; break;
        }
    }
    std::vector<int> rooms_seen(visited.begin(), visited.end());
    int qroom = rooms_seen[rng.uniform_int(rooms_seen.size())];
    ep.query_dancer = dancers[static_cast<std::size_t>(qroom)];
    ep.label_dance = dances[static_cast<std::size_t>(qroom)];
    return ep;
}

inline Episode gen_strategy_task(TaskKind kind, std::uint64_t seed, const BalletConfig& cfg) {
    if (!is_strategy_task(kind)) throw std::invalid_argument("not a strategy task");
    if (cfg.num_dancers < cfg.visits)
        throw std::invalid_argument("strategy task: need one distinct dancer per stay (" +
                                    std::to_string(cfg.visits) + " stays, " +
                                    std::to_string(cfg.num_dancers) + " dancers)");
    const int stays = cfg.visits;
    for (std::uint64_t attempt = 0; attempt < 200; ++attempt) {
        Rng rng(derive_seed(seed, detail::kTaskSeedTag + 3 + static_cast<std::uint64_t>(kind), attempt));
        auto dancers = rng.sample_distinct(cfg.num_dancers, stays);
        std::vector<int> dances(static_cast<std::size_t>(stays));
        for (auto& d : dances) d = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.num_dances)));

        Episode ep;
        ep.kind = kind;
        ep.seed = seed;
        ep.num_dances = cfg.num_dances;
        std::vector<int> stay_room(static_cast<std::size_t>(stays));
        std::size_t t = 0;
        int room = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.rooms())));
        for (int s = 0; s < stays; ++s) {
            stay_room[static_cast<std::size_t>(s)] = room;
            detail::append_stay(ep.steps, t, room, dancers[static_cast<std::size_t>(s)],
                                dances[static_cast<std::size_t>(s)], cfg.dance_len);
            room = detail::next_room(rng, room, cfg);
        }
        ep.capacity_hint = static_cast<std::size_t>(
            static_cast<double>(ep.steps.size()) * cfg.capacity_ratio + 0.5);

        // candidate query stays per task semantics
        std::vector<int> candidates;
        switch (kind) {
            case TaskKind::BalletFIFO: // newest half of the episode
                // The final stay is excluded: with lazy (overflow-only) eviction
                // LIFO always keeps the single most recent frame, which would
                // leave that stay answerable under the opposing strategy.
                for (int s = stays / 2; s + 1 < stays; ++s) candidates.push_back(s);
                break;
            case TaskKind::BalletLIFO: // oldest half of the episode
                for (int s = 0; s < stays / 2; ++s) candidates.push_back(s);
                break;
            case TaskKind::BalletMVFO: { // each room's most recent stay
                std::map<int, int> last_stay;
                std::map<int, int> stay_count;
                for (int s = 0; s < stays; ++s) {
                    last_stay[stay_room[static_cast<std::size_t>(s)]] = s;
                    stay_count[stay_room[static_cast<std::size_t>(s)]]++;
                }
                bool any_repeat = false;
                for (const auto& [r, n] : stay_count)
                    if (n >= 2) any_repeat = true;
                if (!any_repeat) break; // degenerate trace: no room revisited
                for (const auto& [r, s] : last_stay) candidates.push_back(s);
                break;
            }
            case TaskKind::BalletLVFO: { // dancers of the most frequently visited room
                std::map<int, int> entries;
                for (int s = 0; s < stays; ++s) entries[stay_room[static_cast<std::size_t>(s)]]++;
                int best_room = -1, best = -1;
                for (const auto& [r, n] : entries)
                    if (n > best) {
                        best = n;
                        best_room = r;
                    }
                for (int s = 0; s < stays; ++s)
                    if (stay_room[static_cast<std::size_t>(s)] == best_room) candidates.push_back(s);
                break;
            }
            default: break;
        }
        if (candidates.empty()) continue;

        // answerability guarantee: the matched strategy must retain the stay
        auto retained = replay_retained(ep.steps, matched_strategy(kind), ep.capacity_hint);
        std::vector<int> valid;
        for (int s : candidates) {
            bool ok = false;
            for (std::size_t ft = static_cast<std::size_t>(s) * static_cast<std::size_t>(cfg.dance_len);
                 ft < static_cast<std::size_t>(s + 1) * static_cast<std::size_t>(cfg.dance_len); ++ft)
                if (retained.count(ft)) ok = true;
            if (ok) valid.push_back(s);
        }
        if (valid.empty()) continue;
        const int qstay = valid[rng.uniform_int(valid.size())];
        ep.query_dancer = dancers[static_cast<std::size_t>(qstay)];
        ep.label_dance = dances[static_cast<std::size_t>(qstay)];
        return ep;
    }
    throw std::runtime_error(std::string("strategy task ") + task_name(kind) +
                             ": no valid query after 200 attempts");
}

inline Episode gen_ballet_aba(std::uint64_t seed, const BalletConfig& cfg) {
    if (cfg.rooms() < 8) throw std::invalid_argument("ballet-aba: need at least 8 rooms");
    if (cfg.num_dancers < 8) throw std::invalid_argument("ballet-aba: need at least 8 dancers");
    if (cfg.visits <= 7) throw std::invalid_argument("ballet-aba: need more than 7 visits");
    Rng rng(derive_seed(seed, detail::kTaskSeedTag + 8));
    auto rooms = rng.sample_distinct(cfg.rooms(), 8);
    auto dancers = rng.sample_distinct(cfg.num_dancers, 8);
    std::vector<int> dances(8);
    for (auto& d : dances) d = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.num_dances)));

    Episode ep;
    ep.kind = TaskKind::BalletABA;
    ep.seed = seed;
    ep.num_dances = cfg.num_dances;
    ep.capacity_hint = static_cast<std::size_t>(8 * cfg.dance_len);
    std::size_t t = 0;
    // 7 unique rooms, then a long stay in the 8th
    for (int v = 0; v < 7; ++v)
        detail::append_stay(ep.steps, t, rooms[static_cast<std::size_t>(v)],
                            dancers[static_cast<std::size_t>(v)], dances[static_cast<std::size_t>(v)],
                            cfg.dance_len);
    for (int v = 7; v < cfg.visits; ++v)
        detail::append_stay(ep.steps, t, rooms[7], dancers[7], dances[7], cfg.dance_len);

    const auto q = rng.uniform_int(7);
    ep.query_dancer = dancers[q];
    ep.label_dance = dances[q];
    return ep;
}

inline Episode gen_opposite_ballet(std::uint64_t seed, const BalletConfig& cfg) {
    if (cfg.grid_w != 3 || cfg.grid_h != 3)
        throw std::invalid_argument("opposite-ballet: grid must be 3x3");
    if (cfg.num_dancers < 8)
        throw std::invalid_argument("opposite-ballet: need 8 distinct dancers");
    Rng rng(derive_seed(seed, detail::kTaskSeedTag + 9));
    const std::vector<int> perimeter{0, 1, 2, 3, 5, 6, 7, 8}; // no dancer at the center
    auto dancers = rng.sample_distinct(cfg.num_dancers, 8);
    std::vector<int> dances(8);
    for (auto& d : dances) d = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.num_dances)));
    auto room_slot = [&](int room) {
        for (std::size_t i = 0; i < perimeter.size(); ++i)
            if (perimeter[i] == room) return i;
        throw std::logic_error("not a perimeter room");
    };

    Episode ep;
    ep.kind = TaskKind::OppositeBallet;
    ep.seed = seed;
    ep.num_dances = cfg.num_dances;
    // every room observed once, in random order; the agent cannot enter the center
    std::vector<int> order = perimeter;
    rng.shuffle(order);
    std::size_t t = 0;
    for (int room : order) {
        auto slot = room_slot(room);
        detail::append_stay(ep.steps, t, room, dancers[slot], dances[slot], cfg.dance_len);
    }
    const int qroom = perimeter[rng.uniform_int(perimeter.size())];
    ep.query_dancer = dancers[room_slot(qroom)];
    ep.label_dance = dances[room_slot(opposite_room_3x3(qroom))];
    return ep;
}

inline Episode gen_episode(TaskKind kind, std::uint64_t seed, const BalletConfig& cfg) {
    switch (kind) {
        case TaskKind::NextBallet: return gen_next_ballet(seed, cfg);
        case TaskKind::ShortStay: return gen_short_stay(seed, cfg);
        case TaskKind::BalletFIFO:
        case TaskKind::BalletLIFO:
        case TaskKind::BalletMVFO:
        case TaskKind::BalletLVFO: return gen_strategy_task(kind, seed, cfg);
        case TaskKind::BalletABA: return gen_ballet_aba(seed, cfg);
        case TaskKind::OppositeBallet: return gen_opposite_ballet(seed, cfg);
    }
    throw std::logic_error("gen_episode: bad kind");
}

// ---------------------------------------------------------------------------
// independent label oracle

/// Recomputes the label by scanning the raw streams, sharing nothing with the
/// generators' internal state.
inline int recompute_label(const Episode& ep) {
    auto room_of_dancer = [&](int dancer) {
        for (const auto& s : ep.steps)
            if (s.dancer == dancer) return s.place;
        throw std::runtime_error("oracle: query dancer never observed");
    };
    auto dance_in_room = [&](int room) {
        for (auto it = ep.steps.rbegin(); it != ep.steps.rend(); ++it)
            if (it->place == room) return it->dance;
        throw std::runtime_error("oracle: room never observed");
    };
    switch (ep.kind) {
        case TaskKind::NextBallet:
            return dance_in_room(ring_next_3x3(room_of_dancer(ep.query_dancer)));
        case TaskKind::OppositeBallet:
            return dance_in_room(opposite_room_3x3(room_of_dancer(ep.query_dancer)));
        case TaskKind::ShortStay:
        case TaskKind::BalletABA:
        case TaskKind::BalletFIFO:
        case TaskKind::BalletLIFO:
        case TaskKind::BalletMVFO:
        case TaskKind::BalletLVFO: {
            // the query dancer performs exactly one dance
            for (const auto& s : ep.steps)
                if (s.dancer == ep.query_dancer) return s.dance;
            throw std::runtime_error("oracle: query dancer never observed");
        }
    }
    throw std::logic_error("oracle: bad kind");
}

// ---------------------------------------------------------------------------
// episode text format: trace-dump frame lines plus a keyword footer

inline void dump_episode(std::ostream& os, const Episode& ep) {
    for (const auto& s : ep.steps)
        os << s.t << ' ' << s.place << ' ' << s.dancer << ' ' << s.dance << ' ' << s.phase << '\n';
    os << "query " << ep.query_dancer << '\n';
    os << "label " << ep.label_dance << '\n';
    os << "task " << task_name(ep.kind) << '\n';
    os << "seed " << ep.seed << '\n';
    os << "dances " << ep.num_dances << '\n';
    os << "capacity " << ep.capacity_hint << '\n';
}

inline Episode load_episode(std::istream& is) {
    Episode ep;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string head;
        ls >> head;
        if (head == "query")
            ls >> ep.query_dancer;
        else if (head == "label")
            ls >> ep.label_dance;
        else if (head == "task") {
            std::string name;
            ls >> name;
            ep.kind = task_from_name(name);
        } else if (head == "seed")
            ls >> ep.seed;
        else if (head == "dances")
            ls >> ep.num_dances;
        else if (head == "capacity")
            ls >> ep.capacity_hint;
        else {
            auto f = parse_frame_line<float>(line);
            ep.steps.push_back({f.time_index, f.place_id, f.meta.dancer, f.meta.dance, f.meta.phase});
        }
    }
    if (ep.steps.empty()) throw std::runtime_error("episode: no frames");
    return ep;
}

} // namespace sat
