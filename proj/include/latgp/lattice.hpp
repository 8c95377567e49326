#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "latgp/errors.hpp"
#include "latgp/rng.hpp"

namespace latgp {

/// Observation grid: n1 x n2 sites at spacing delta = s / n1, site (i, j)
/// at coordinates (i*delta, j*delta). Half-open convention: the grid spans
/// [0, s) x [0, (n2/n1)*s), so periodic extensions tile exactly.
struct LatticeSpec {
    int n1 = 0;
    int n2 = 0;
    double s = 0.0;
    double delta = 0.0;

    int size() const { return n1 * n2; }
    std::pair<double, double> coords(int i, int j) const { return {i * delta, j * delta}; }
};

inline LatticeSpec build_lattice(int n1, int n2, double s) {
    if (n1 < 2 || n2 < 2) throw ConfigError("lattice dimensions must be >= 2");
    if (!(s > 0.0)) throw ConfigError("domain side length must be positive");
    return LatticeSpec{n1, n2, s, s / n1};
}

/// Toroidal embedding grid around a base lattice. `r` is the cutoff radius
/// in spatial units and `dist_unit` the maximum distance in the original
/// domain (the base diagonal), the length mapped to normalized distance 1:
/// every within-base distance then falls strictly below 1, where the
/// modified correlation coincides with the raw one. The torus periods are
/// N1*delta and N2*delta; they equal 2r exactly unless N had to be rounded
/// up to a 5-smooth integer.
struct EmbeddingSpec {
    int N1 = 0;
    int N2 = 0;
    double r = 0.0;
    double dist_unit = 0.0;
    LatticeSpec base;

    int size() const { return N1 * N2; }
    double delta() const { return base.delta; }
    double period1() const { return N1 * base.delta; }
    double period2() const { return N2 * base.delta; }
    int index(int i, int j) const { return i * N2 + j; }
};

namespace detail {

inline bool is_5smooth(int n) {
    for (int p : {2, 3, 5})
        while (n % p == 0) n /= p;
    return n == 1;
}

inline int next_5smooth(int n) {
    while (!is_5smooth(n)) ++n;
    return n;
}

}  // namespace detail

inline EmbeddingSpec build_embedding(const LatticeSpec& base, double r_factor) {
    if (!(r_factor >= 1.0)) throw ConfigError("embedding r_factor must be >= 1");
    const double dist_unit =
        base.delta * std::hypot(double(base.n1), double(base.n2));
    const double r = r_factor * base.s;
    const int n_max = std::max(base.n1, base.n2);
    int n_min = static_cast<int>(std::ceil(2.0 * r / base.delta - 1e-9));
    n_min = std::max(n_min, 2 * n_max);
    const int N = detail::next_5smooth(n_min);
    return EmbeddingSpec{N, N, r, dist_unit, base};
}

/// Euclidean distance between two embedding sites with per-coordinate
/// wrap-around on the torus.
inline double wrap_distance(const EmbeddingSpec& emb, int idx_a, int idx_b) {
    const int ia = idx_a / emb.N2, ja = idx_a % emb.N2;
    const int ib = idx_b / emb.N2, jb = idx_b % emb.N2;
    int di = std::abs(ia - ib);
    int dj = std::abs(ja - jb);
    di = std::min(di, emb.N1 - di);
    dj = std::min(dj, emb.N2 - dj);
    const double dx = di * emb.delta();
    const double dy = dj * emb.delta();
    return std::hypot(dx, dy);
}

/// Partition of the embedding lattice into observed and unobserved sites,
/// both in ascending (lexicographic) order of linear index. Observed sites
/// always lie inside the base footprint.
struct ObservationMask {
    std::vector<int> observed;
    std::vector<int> unobserved;
    int n = 0;
    std::string design_tag;

    bool fully_observed() const { return unobserved.empty(); }
};

struct DesignSpec {
    enum class Kind { complete, random, disk, file };
    Kind kind = Kind::complete;
    double p = 0.0;

    static DesignSpec complete() { return {Kind::complete, 0.0}; }
    static DesignSpec random(double p) { return {Kind::random, p}; }
    static DesignSpec disk(double p) { return {Kind::disk, p}; }

    std::string tag() const {
        switch (kind) {
            case Kind::complete: return "complete";
            case Kind::random: return "random(" + std::to_string(p) + ")";
            case Kind::disk: return "disk(" + std::to_string(p) + ")";
            case Kind::file: return "file";
        }
        return "?";
    }
};

namespace detail {

inline ObservationMask mask_from_base_flags(const EmbeddingSpec& emb,
                                            const std::vector<char>& base_observed,
                                            std::string tag) {
    ObservationMask mask;
    mask.design_tag = std::move(tag);
    mask.observed.reserve(emb.base.size());
    mask.unobserved.reserve(emb.size() - emb.base.size());
    for (int i = 0; i < emb.N1; ++i) {
        for (int j = 0; j < emb.N2; ++j) {
            const int idx = emb.index(i, j);
            const bool in_base = i < emb.base.n1 && j < emb.base.n2;
            if (in_base && base_observed[i * emb.base.n2 + j])
                mask.observed.push_back(idx);
            else
                mask.unobserved.push_back(idx);
        }
    }
    mask.n = static_cast<int>(mask.observed.size());
    return mask;
}

}  // namespace detail

inline ObservationMask make_mask(const EmbeddingSpec& emb, const DesignSpec& design,
                                 RandomStream rng = RandomStream(0)) {
    const int n1 = emb.base.n1, n2 = emb.base.n2;
    std::vector<char> obs(static_cast<std::size_t>(n1) * n2, 1);
    switch (design.kind) {
        case DesignSpec::Kind::complete:
            break;
        case DesignSpec::Kind::random: {
            if (design.p < 0.0 || design.p >= 1.0)
                throw ConfigError("random design requires p in [0, 1)");
            for (auto& o : obs) o = rng.uniform() < design.p ? 0 : 1;
            break;
        }
        case DesignSpec::Kind::disk: {
            if (design.p < 0.0 || design.p >= 1.0)
                throw ConfigError("disk design requires p in [0, 1)");
            const long target = std::lround(design.p * n1 * n2);
            if (target > 0) {
                // Distances from the grid centroid, in quarter-site-squared
                // integer units so ties are exact.
                const int ci2 = n1 - 1, cj2 = n2 - 1;  // 2 * centroid
                std::vector<long> d2(obs.size());
                for (int i = 0; i < n1; ++i)
                    for (int j = 0; j < n2; ++j) {
                        const long di = 2L * i - ci2, dj = 2L * j - cj2;
                        d2[i * n2 + j] = di * di + dj * dj;
                    }
                std::vector<long> sorted(d2);
                std::sort(sorted.begin(), sorted.end());
                // Radius must cover whole tie groups; pick the count closest
                // to the target among the two achievable neighbors.
                long below = 0, above = static_cast<long>(sorted.size());
                for (std::size_t k = 0; k < sorted.size(); ++k) {
                    if (static_cast<long>(k + 1) < static_cast<long>(sorted.size()) &&
                        sorted[k + 1] == sorted[k])
                        continue;
                    const long count = static_cast<long>(k + 1);
                    if (count <= target) below = count;
                    if (count >= target) { above = count; break; }
                }
                const long chosen = (target - below <= above - target) ? below : above;
                if (chosen > 0) {
                    const long radius2 = sorted[chosen - 1];
                    for (std::size_t k = 0; k < obs.size(); ++k)
                        if (d2[k] <= radius2) obs[k] = 0;
                }
            }
            break;
        }
        case DesignSpec::Kind::file:
            throw ConfigError("file designs are built via load_mask");
    }
    return detail::mask_from_base_flags(emb, obs, design.tag());
}

/// Text mask format: one line per base row, 'o' observed, '.' missing.
inline void save_mask(const ObservationMask& mask, const EmbeddingSpec& emb,
                      const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open mask file for writing: " + path);
    std::vector<char> obs(static_cast<std::size_t>(emb.base.n1) * emb.base.n2, 0);
    for (int idx : mask.observed) {
        const int i = idx / emb.N2, j = idx % emb.N2;
        obs[i * emb.base.n2 + j] = 1;
    }
    for (int i = 0; i < emb.base.n1; ++i) {
        for (int j = 0; j < emb.base.n2; ++j) out.put(obs[i * emb.base.n2 + j] ? 'o' : '.');
        out.put('\n');
    }
}

inline ObservationMask load_mask(const EmbeddingSpec& emb, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open mask file: " + path);
    std::vector<char> obs;
    obs.reserve(static_cast<std::size_t>(emb.base.n1) * emb.base.n2);
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (static_cast<int>(line.size()) != emb.base.n2)
            throw IoError("mask row " + std::to_string(rows) + " has length " +
                          std::to_string(line.size()) + ", expected " +
                          std::to_string(emb.base.n2));
        for (char ch : line) {
            if (ch != 'o' && ch != '.') throw IoError("mask contains invalid character");
            obs.push_back(ch == 'o' ? 1 : 0);
        }
        ++rows;
    }
    if (rows != emb.base.n1)
        throw IoError("mask has " + std::to_string(rows) + " rows, expected " +
                      std::to_string(emb.base.n1));
    return detail::mask_from_base_flags(emb, obs, "file");
}

}  // namespace latgp
