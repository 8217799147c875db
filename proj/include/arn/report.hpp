#pragma once

// Result tables: one row per (defense, attack, seed) cell, serialized as JSON
// and as an aligned text table with attacks as columns and defenses as rows.

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "arn/serialize.hpp"

namespace arn {

struct ReportRow {
    std::string target_model;
    std::string defense_config;
    std::string attack_name;
    bool seen = false;
    std::string scenario;  // whitebox / graybox / bpda for leaked-defense rows
    double error_rate_percent = 0.0;
    std::int64_t n_examples = 0;
    std::uint64_t seed = 0;

    double accuracy_percent() const { return 100.0 - error_rate_percent; }
};

struct Report {
    std::vector<ReportRow> rows;
    std::string timestamp;
    std::uint32_t config_hash = 0;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["metadata"] = {{"timestamp", timestamp}, {"config_hash", config_hash}};
        j["rows"] = nlohmann::json::array();
        for (const ReportRow& r : rows) {
            nlohmann::json row = {
                {"target_model", r.target_model},
                {"defense_config", r.defense_config},
                {"attack_name", r.attack_name},
                {"seen", r.seen},
                {"error_rate_percent", r.error_rate_percent},
                {"n_examples", r.n_examples},
                {"seed", r.seed},
            };
            if (!r.scenario.empty()) row["scenario"] = r.scenario;
            j["rows"].push_back(row);
        }
        return j;
    }

    // Mean error over seeds for a (defense, attack) cell; nan if absent.
    double mean_error(const std::string& defense, const std::string& attack) const {
        double acc = 0.0;
        int n = 0;
        for (const ReportRow& r : rows) {
            if (r.defense_config == defense && r.attack_name == attack) {
                acc += r.error_rate_percent;
                ++n;
            }
        }
        return n ? acc / n : std::numeric_limits<double>::quiet_NaN();
    }

    std::string text_table() const {
        // column order: first appearance; row order: first appearance
        std::vector<std::string> attacks, defenses;
        for (const ReportRow& r : rows) {
            if (std::find(attacks.begin(), attacks.end(), r.attack_name) == attacks.end()) {
                attacks.push_back(r.attack_name);
            }
            if (std::find(defenses.begin(), defenses.end(), r.defense_config) == defenses.end()) {
                defenses.push_back(r.defense_config);
            }
        }
        struct Cell {
            double lo = 0, hi = 0, mean = 0;
            int n = 0;
        };
        std::map<std::pair<std::string, std::string>, Cell> cells;
        for (const ReportRow& r : rows) {
            Cell& c = cells[{r.defense_config, r.attack_name}];
            if (c.n == 0) {
                c.lo = c.hi = r.error_rate_percent;
            } else {
                c.lo = std::min(c.lo, r.error_rate_percent);
                c.hi = std::max(c.hi, r.error_rate_percent);
            }
            c.mean += r.error_rate_percent;
            ++c.n;
        }
        std::size_t wid = 12;
        for (const auto& a : attacks) wid = std::max(wid, a.size() + 2);
        std::size_t dwid = 10;
        for (const auto& d : defenses) dwid = std::max(dwid, d.size() + 2);

        std::ostringstream os;
        os << "error rate (%), lower is better\n";
        os << std::left << std::setw(static_cast<int>(dwid)) << "defense";
        for (const auto& a : attacks) os << std::setw(static_cast<int>(wid)) << a;
        os << "\n";
        for (const auto& d : defenses) {
            os << std::left << std::setw(static_cast<int>(dwid)) << d;
            for (const auto& a : attacks) {
                auto it = cells.find({d, a});
                std::ostringstream val;
                if (it == cells.end()) {
                    val << "-";
                } else {
                    const Cell& c = it->second;
                    val << std::fixed << std::setprecision(2) << c.mean / c.n;
                    if (c.n > 1) val << " +-" << std::setprecision(2) << (c.hi - c.lo) / 2.0;
                }
                os << std::setw(static_cast<int>(wid)) << val.str();
            }
            os << "\n";
        }
        return os.str();
    }
};

inline std::uint32_t hash_config_text(const std::string& text) {
    return detail::crc32(text.data(), text.size());
}

}  // namespace arn
