#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "latgp/errors.hpp"
#include "latgp/lattice.hpp"

namespace latgp {

/// Base-lattice grid with missing cells as NaN, plus the JSON sidecar
/// describing its geometry. The CSV body is row-major, one line per row;
/// the sidecar lives next to it at <path>.json.
struct GridData {
    LatticeSpec lattice;
    std::vector<double> values;  // n1 * n2, NaN = missing
    int missing = 0;
    nlohmann::json sidecar;
};

namespace detail {

inline std::string format_cell(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline void write_grid(const std::string& path, const LatticeSpec& lattice,
                       const std::vector<double>& values,
                       const nlohmann::json& extra = {}) {
    if (static_cast<int>(values.size()) != lattice.size())
        throw DimensionError("write_grid: value count does not match the lattice");
    std::ofstream out(path);
    if (!out) throw IoError("cannot open grid file for writing: " + path);
    int missing = 0;
    for (int i = 0; i < lattice.n1; ++i) {
        for (int j = 0; j < lattice.n2; ++j) {
            if (j) out.put(',');
            const double v = values[i * lattice.n2 + j];
            if (std::isnan(v)) ++missing;
            out << detail::format_cell(v);
        }
        out.put('\n');
    }
    out.close();

    nlohmann::json side = extra;
    side["n1"] = lattice.n1;
    side["n2"] = lattice.n2;
    side["s"] = lattice.s;
    side["missing"] = missing;
    std::ofstream sidecar(path + ".json");
    if (!sidecar) throw IoError("cannot open sidecar for writing: " + path + ".json");
    sidecar << side.dump(2) << '\n';
}

inline GridData ingest_grid(const std::string& path) {
    std::ifstream side_in(path + ".json");
    if (!side_in) throw IoError("missing sidecar: " + path + ".json");
    GridData grid;
    try {
        side_in >> grid.sidecar;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("sidecar is not valid JSON: " + std::string(e.what()));
    }
    if (!grid.sidecar.contains("n1") || !grid.sidecar.contains("n2") ||
        !grid.sidecar.contains("s"))
        throw IoError("sidecar must provide n1, n2 and s");
    grid.lattice = build_lattice(grid.sidecar["n1"].get<int>(),
                                 grid.sidecar["n2"].get<int>(),
                                 grid.sidecar["s"].get<double>());

    std::ifstream in(path);
    if (!in) throw IoError("cannot open grid file: " + path);
    std::string line;
    int rows = 0;
    grid.values.reserve(grid.lattice.size());
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        int cols = 0;
        while (std::getline(ss, cell, ',')) {
            double v;
            if (cell == "nan" || cell == "NaN" || cell == "NAN") {
                v = std::numeric_limits<double>::quiet_NaN();
            } else {
                try {
                    std::size_t pos = 0;
                    v = std::stod(cell, &pos);
                    if (pos != cell.size()) throw std::invalid_argument(cell);
                } catch (const std::exception&) {
                    throw IoError("non-numeric cell '" + cell + "' at row " +
                                  std::to_string(rows));
                }
            }
            if (std::isnan(v)) ++grid.missing;
            grid.values.push_back(v);
            ++cols;
        }
        if (cols != grid.lattice.n2)
            throw IoError("row " + std::to_string(rows) + " has " +
                          std::to_string(cols) + " cells, expected " +
                          std::to_string(grid.lattice.n2));
        ++rows;
    }
    if (rows != grid.lattice.n1)
        throw IoError("grid has " + std::to_string(rows) + " rows, expected " +
                      std::to_string(grid.lattice.n1));
    return grid;
}

/// Splits an ingested grid into the observed vector and its mask on the
/// given embedding (design tag "file").
inline std::pair<std::vector<double>, ObservationMask> grid_to_observations(
    const GridData& grid, const EmbeddingSpec& emb) {
    if (emb.base.n1 != grid.lattice.n1 || emb.base.n2 != grid.lattice.n2)
        throw DimensionError("embedding base does not match the grid");
    std::vector<char> obs(grid.values.size());
    for (std::size_t k = 0; k < grid.values.size(); ++k)
        obs[k] = std::isnan(grid.values[k]) ? 0 : 1;
    ObservationMask mask = detail::mask_from_base_flags(emb, obs, "file");
    std::vector<double> z_o;
    z_o.reserve(mask.n);
    for (int idx : mask.observed) {
        const int i = idx / emb.N2, j = idx % emb.N2;
        z_o.push_back(grid.values[i * grid.lattice.n2 + j]);
    }
    if (mask.n < 3) throw ConfigError("grid has fewer than 3 observed values");
    return {std::move(z_o), std::move(mask)};
}

}  // namespace latgp
