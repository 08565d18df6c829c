#pragma once

#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sat/tensor.hpp"

namespace sat {

enum class EvictionStrategy { FIFO, LIFO, MVFO, LVFO };

inline const char* strategy_name(EvictionStrategy s) {
    switch (s) {
        case EvictionStrategy::FIFO: return "fifo";
        case EvictionStrategy::LIFO: return "lifo";
        case EvictionStrategy::MVFO: return "mvfo";
        case EvictionStrategy::LVFO: return "lvfo";
    }
    return "?";
}

inline EvictionStrategy strategy_from_name(const std::string& name) {
    if (name == "fifo") return EvictionStrategy::FIFO;
    if (name == "lifo") return EvictionStrategy::LIFO;
    if (name == "mvfo") return EvictionStrategy::MVFO;
    if (name == "lvfo") return EvictionStrategy::LVFO;
    throw std::invalid_argument("unknown eviction strategy '" + name + "'");
}

inline constexpr std::size_t kNumStrategies = 4;
inline constexpr EvictionStrategy kAllStrategies[kNumStrategies] = {
    EvictionStrategy::FIFO, EvictionStrategy::LIFO, EvictionStrategy::MVFO,
    EvictionStrategy::LVFO};

enum class MemoryLayout { Flat, Place };
enum class VisitCountMode { Entries, Occupancy };

struct FrameMeta {
    int dancer = -1;
    int dance = -1;
    int phase = -1;
};

template <typename S>
struct ExperienceFrame {
    TensorT<S> embedding; // may be undefined for replay-only traces
    std::size_t time_index = 0;
    int place_id = 0;
    FrameMeta meta; // test-oracle metadata only; never enters embeddings
};

/// A bounded group of frames sharing one place (place layout) or one time
/// window (flat view). The representative is the elementwise mean of the
/// member embeddings.
template <typename S>
struct Chunk {
    int place_id = -1; // -1 marks a mixed (time-window) chunk
    std::size_t creation_index = 0;
    std::vector<ExperienceFrame<S>> frames; // increasing time_index
    std::vector<S> representative;

    void recompute_representative() {
        representative.clear();
        if (frames.empty() || !frames.front().embedding.defined()) return;
        const std::size_t d = frames.front().embedding.size();
        representative.assign(d, S(0));
        for (const auto& f : frames) {
            auto e = f.embedding.data();
            for (std::size_t i = 0; i < d; ++i) representative[i] += e[i];
        }
        const S inv = S(1) / static_cast<S>(frames.size());
        for (S& v : representative) v *= inv;
    }
};

template <typename S>
struct PlaceMemory {
    int place_id = 0;
    std::vector<Chunk<S>> chunks; // oldest..newest
    std::size_t visit_count = 0;  // entry events (monotone)
    std::size_t occupancy = 0;    // frames ever written here (monotone)
    std::size_t frame_count = 0;  // live frames
};

struct MemoryConfig {
    MemoryLayout layout = MemoryLayout::Flat;
    std::size_t capacity = 0;      // total frames; 0 = unlimited
    std::size_t per_place_cap = 0; // place layout only; 0 = unlimited
    std::size_t chunk_size = 32;
    VisitCountMode visit_mode = VisitCountMode::Entries;
};

/// Capacity-bounded episodic store. Eviction is frame-granular and layout
/// independent: a strategy chooses the victim from frame time/place metadata,
/// so flat and place layouts retain identical frame sets and differ only in
/// how reads are grouped into chunks.
template <typename S>
class EpisodicMemory {
public:
    EpisodicMemory() = default;
    explicit EpisodicMemory(MemoryConfig cfg) : cfg_(cfg) {
        if (cfg.chunk_size == 0) throw std::invalid_argument("memory: chunk_size must be >= 1");
    }

    const MemoryConfig& config() const { return cfg_; }
    std::size_t size() const { return total_frames_; }
    bool empty() const { return total_frames_ == 0; }

    void write(const ExperienceFrame<S>& frame, EvictionStrategy sigma) {
        auto& st = stats_[frame.place_id];
        st.second++; // occupancy
        if (last_place_ == kNoPlace || last_place_ != frame.place_id) st.first++; // entry event
        last_place_ = frame.place_id;

        if (cfg_.layout == MemoryLayout::Place && cfg_.per_place_cap > 0) {
            auto it = places_.find(frame.place_id);
            if (it != places_.end() && it->second.frame_count >= cfg_.per_place_cap)
                evict_oldest_of_place(frame.place_id);
        }
        if (cfg_.capacity > 0 && total_frames_ >= cfg_.capacity) evict(sigma);

        if (cfg_.layout == MemoryLayout::Flat) {
            flat_.push_back(frame);
        } else {
            auto& pm = places_[frame.place_id];
            pm.place_id = frame.place_id;
            if (pm.chunks.empty() || pm.chunks.back().frames.size() >= cfg_.chunk_size) {
                Chunk<S> c;
                c.place_id = frame.place_id;
                c.creation_index = next_chunk_index_++;
                pm.chunks.push_back(std::move(c));
            }
            pm.chunks.back().frames.push_back(frame);
            pm.chunks.back().recompute_representative();
            pm.frame_count++;
        }
        ++total_frames_;
    }

    /// Removes one frame per the strategy; returns its time_index.
    std::size_t evict(EvictionStrategy sigma) {
        if (empty()) throw std::runtime_error("evict: memory is empty");
        switch (sigma) {
            case EvictionStrategy::FIFO: return evict_frame(find_extreme_time(true));
            case EvictionStrategy::LIFO: return evict_frame(find_extreme_time(false));
            case EvictionStrategy::MVFO: return evict_oldest_of_place(pick_place_by_visits(true));
            case EvictionStrategy::LVFO: return evict_oldest_of_place(pick_place_by_visits(false));
        }
        throw std::logic_error("evict: bad strategy");
    }

    /// Chunks in creation order, across all places.
    std::vector<Chunk<S>> chunk_view() const {
        if (cfg_.layout == MemoryLayout::Flat) return flat_chunk_view(cfg_.chunk_size);
        std::vector<const Chunk<S>*> ptrs;
        for (const auto& [pid, pm] : places_)
            for (const auto& c : pm.chunks)
                if (!c.frames.empty()) ptrs.push_back(&c);
        std::sort(ptrs.begin(), ptrs.end(),
                  [](const Chunk<S>* a, const Chunk<S>* b) { return a->creation_index < b->creation_index; });
        std::vector<Chunk<S>> out;
        out.reserve(ptrs.size());
        for (const auto* p : ptrs) out.push_back(*p);
        return out;
    }

    /// Consecutive time windows of `chunk_size` frames; chunks may mix places.
    std::vector<Chunk<S>> flat_chunk_view(std::size_t chunk_size) const {
        if (cfg_.layout != MemoryLayout::Flat)
            throw std::logic_error("flat_chunk_view: memory uses place layout");
        if (chunk_size == 0) throw std::invalid_argument("flat_chunk_view: chunk_size must be >= 1");
        std::vector<Chunk<S>> out;
        for (std::size_t i = 0; i < flat_.size(); i += chunk_size) {
            Chunk<S> c;
            c.creation_index = out.size();
            c.place_id = -1;
            for (std::size_t j = i; j < std::min(flat_.size(), i + chunk_size); ++j)
                c.frames.push_back(flat_[j]);
            bool pure = true;
            for (const auto& f : c.frames)
                if (f.place_id != c.frames.front().place_id) pure = false;
            if (pure) c.place_id = c.frames.front().place_id;
            c.recompute_representative();
            out.push_back(std::move(c));
        }
        return out;
    }

    /// All live frames in time order (snapshot).
    std::vector<ExperienceFrame<S>> frames() const {
        std::vector<ExperienceFrame<S>> out;
        out.reserve(total_frames_);
        if (cfg_.layout == MemoryLayout::Flat) {
            out = flat_;
        } else {
            for (const auto& [pid, pm] : places_)
                for (const auto& c : pm.chunks)
                    for (const auto& f : c.frames) out.push_back(f);
            std::sort(out.begin(), out.end(),
                      [](const auto& a, const auto& b) { return a.time_index < b.time_index; });
        }
        return out;
    }

    std::size_t visit_count(int place_id) const {
        auto it = stats_.find(place_id);
        if (it == stats_.end()) return 0;
        return cfg_.visit_mode == VisitCountMode::Entries ? it->second.first : it->second.second;
    }

    std::size_t live_frame_count(int place_id) const {
        if (cfg_.layout == MemoryLayout::Place) {
            auto it = places_.find(place_id);
            return it == places_.end() ? 0 : it->second.frame_count;
        }
        std::size_t n = 0;
        for (const auto& f : flat_)
            if (f.place_id == place_id) ++n;
        return n;
    }

    const std::map<int, PlaceMemory<S>>& places() const { return places_; }

private:
    static constexpr int kNoPlace = std::numeric_limits<int>::min();

    struct FrameLoc {
        std::size_t time_index;
        int place_id;
    };

    FrameLoc find_extreme_time(bool oldest) const {
        if (cfg_.layout == MemoryLayout::Flat) {
            const auto& f = oldest ? flat_.front() : flat_.back();
            return {f.time_index, f.place_id};
        }
        const ExperienceFrame<S>* best = nullptr;
        for (const auto& [pid, pm] : places_) {
            for (const auto& c : pm.chunks) {
                if (c.frames.empty()) continue;
                const auto& cand = oldest ? c.frames.front() : c.frames.back();
                if (!best || (oldest ? cand.time_index < best->time_index
                                     : cand.time_index > best->time_index))
                    best = &cand;
            }
        }
        return {best->time_index, best->place_id};
    }

    /// Most/least visited place among places with live frames.
    /// Ties: larger live frame count, then lower place id.
    int pick_place_by_visits(bool most) const {
        int best = kNoPlace;
        std::size_t best_visits = 0, best_frames = 0;
        auto consider = [&](int pid, std::size_t live) {
            if (live == 0) return;
            const std::size_t visits = visit_count(pid);
            bool better;
            if (best == kNoPlace)
                better = true;
            else if (visits != best_visits)
                better = most ? visits > best_visits : visits < best_visits;
            else if (live != best_frames)
                better = live > best_frames;
            else
                better = pid < best;
            if (better) {
                best = pid;
                best_visits = visits;
                best_frames = live;
            }
        };
        if (cfg_.layout == MemoryLayout::Place) {
            for (const auto& [pid, pm] : places_) consider(pid, pm.frame_count);
        } else {
            std::map<int, std::size_t> live;
            for (const auto& f : flat_) live[f.place_id]++;
            for (const auto& [pid, n] : live) consider(pid, n);
        }
        return best;
    }

    std::size_t evict_frame(FrameLoc loc) {
        if (cfg_.layout == MemoryLayout::Flat) {
            for (std::size_t i = 0; i < flat_.size(); ++i)
                if (flat_[i].time_index == loc.time_index) {
                    flat_.erase(flat_.begin() + static_cast<std::ptrdiff_t>(i));
                    --total_frames_;
                    return loc.time_index;
                }
            throw std::logic_error("evict: frame not found");
        }
        auto& pm = places_.at(loc.place_id);
        for (std::size_t ci = 0; ci < pm.chunks.size(); ++ci) {
            auto& c = pm.chunks[ci];
            for (std::size_t fi = 0; fi < c.frames.size(); ++fi) {
                if (c.frames[fi].time_index == loc.time_index) {
                    c.frames.erase(c.frames.begin() + static_cast<std::ptrdiff_t>(fi));
                    if (c.frames.empty())
                        pm.chunks.erase(pm.chunks.begin() + static_cast<std::ptrdiff_t>(ci));
                    else
                        c.recompute_representative();
                    pm.frame_count--;
                    --total_frames_;
                    return loc.time_index;
                }
            }
        }
        throw std::logic_error("evict: frame not found in place");
    }

    /// Oldest frame of one place; chunks shrink from their oldest end.
    std::size_t evict_oldest_of_place(int place_id) {
        if (cfg_.layout == MemoryLayout::Flat) {
            for (std::size_t i = 0; i < flat_.size(); ++i)
                if (flat_[i].place_id == place_id) {
                    std::size_t t = flat_[i].time_index;
                    flat_.erase(flat_.begin() + static_cast<std::ptrdiff_t>(i));
                    --total_frames_;
                    return t;
                }
            throw std::logic_error("evict: place has no frames");
        }
        auto& pm = places_.at(place_id);
        auto& c = pm.chunks.front();
        std::size_t t = c.frames.front().time_index;
        c.frames.erase(c.frames.begin());
        if (c.frames.empty())
            pm.chunks.erase(pm.chunks.begin());
        else
            c.recompute_representative();
        pm.frame_count--;
        --total_frames_;
        return t;
    }

    MemoryConfig cfg_;
    std::vector<ExperienceFrame<S>> flat_;
    std::map<int, PlaceMemory<S>> places_;
    std::map<int, std::pair<std::size_t, std::size_t>> stats_; // place -> (entries, occupancy)
    int last_place_ = kNoPlace;
    std::size_t total_frames_ = 0;
    std::size_t next_chunk_index_ = 0;
};

// ---------------------------------------------------------------------------
// trace text format: one frame per line "time place dancer dance phase"

template <typename S>
void dump_frames(std::ostream& os, const std::vector<ExperienceFrame<S>>& frames) {
    for (const auto& f : frames)
        os << f.time_index << ' ' << f.place_id << ' ' << f.meta.dancer << ' ' << f.meta.dance << ' '
           << f.meta.phase << '\n';
}

template <typename S>
ExperienceFrame<S> parse_frame_line(const std::string& line) {
    std::istringstream is(line);
    ExperienceFrame<S> f;
    if (!(is >> f.time_index >> f.place_id >> f.meta.dancer >> f.meta.dance >> f.meta.phase))
        throw std::runtime_error("trace: malformed frame line '" + line + "'");
    return f;
}

} // namespace sat
