#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "sat/rng.hpp"

namespace sat {

struct ClusterResult {
    std::vector<int> assignment; // point index -> place id [0, k)
    std::vector<std::array<double, 2>> centroids;
};

/// Lloyd's k-means over 2-D points with seeded k-means++ initialization.
/// Deterministic given (points, k, seed). Empty clusters are reseeded to the
/// point farthest from its centroid.
inline ClusterResult cluster_places(const std::vector<std::array<double, 2>>& points, int k,
                                    std::uint64_t seed, int max_iters = 100) {
    if (k <= 0) throw std::invalid_argument("cluster_places: k must be positive");
    if (static_cast<std::size_t>(k) > points.size())
        throw std::invalid_argument("cluster_places: k=" + std::to_string(k) + " exceeds " +
                                    std::to_string(points.size()) + " points");
    const std::size_t n = points.size();
    auto dist2 = [&](const std::array<double, 2>& a, const std::array<double, 2>& b) {
        const double dx = a[0] - b[0], dy = a[1] - b[1];
        return dx * dx + dy * dy;
    };

    Rng rng(seed);
    ClusterResult res;
    res.centroids.reserve(static_cast<std::size_t>(k));
    // k-means++ seeding
    res.centroids.push_back(points[rng.uniform_int(n)]);
    std::vector<double> d2(n);
    while (res.centroids.size() < static_cast<std::size_t>(k)) {
        double total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::max();
            for (const auto& c : res.centroids) best = std::min(best, dist2(points[i], c));
            d2[i] = best;
            total += best;
        }
        std::size_t pick = 0;
        if (total <= 0) {
            pick = rng.uniform_int(n); // all remaining points coincide with centroids
        } else {
            double r = rng.uniform() * total;
            double acc = 0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
        }
        res.centroids.push_back(points[pick]);
    }

    res.assignment.assign(n, 0);
    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double bd = std::numeric_limits<double>::max();
            for (int c = 0; c < k; ++c) {
                double d = dist2(points[i], res.centroids[static_cast<std::size_t>(c)]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            if (res.assignment[i] != best) {
                res.assignment[i] = best;
                changed = true;
            }
        }
        std::vector<std::array<double, 2>> sums(static_cast<std::size_t>(k), {0, 0});
        std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < n; ++i) {
            sums[static_cast<std::size_t>(res.assignment[i])][0] += points[i][0];
            sums[static_cast<std::size_t>(res.assignment[i])][1] += points[i][1];
            counts[static_cast<std::size_t>(res.assignment[i])]++;
        }
        for (int c = 0; c < k; ++c) {
            auto ci = static_cast<std::size_t>(c);
            if (counts[ci] == 0) {
                // reseed to the point farthest from its current centroid
                std::size_t far = 0;
                double fd = -1;
                for (std::size_t i = 0; i < n; ++i) {
                    double d = dist2(points[i],
                                     res.centroids[static_cast<std::size_t>(res.assignment[i])]);
                    if (d > fd) {
                        fd = d;
                        far = i;
                    }
                }
                res.centroids[ci] = points[far];
                changed = true;
            } else {
                res.centroids[ci] = {sums[ci][0] / static_cast<double>(counts[ci]),
                                     sums[ci][1] / static_cast<double>(counts[ci])};
            }
        }
        if (!changed && iter > 0) break;
    }
    return res;
}

} // namespace sat
