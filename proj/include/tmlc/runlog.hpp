#pragma once

#include <charconv>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "tmlc/errors.hpp"

namespace tmlc {

// Shortest round-trip decimal form; keeps CSV logs bitwise reproducible.
inline std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

// One row per epoch; the same schema for every method so runs diff cleanly.
struct EpochRow {
    int epoch = 0;
    std::string split = "train";
    double loss_base = 0.0;
    std::optional<double> loss_meta;
    double acc_train_noisy = 0.0;
    double acc_train_true = 0.0;
    double acc_test = 0.0;
    std::optional<double> corrected_label_acc;
    std::optional<double> kl_meta;
};

struct RunLog {
    static constexpr const char* kHeader =
        "epoch,split,loss_base,loss_meta,acc_train_noisy,acc_train_true,acc_test,"
        "corrected_label_acc,kl_meta";

    std::vector<EpochRow> rows;

    std::string to_csv() const {
        std::string out = kHeader;
        out += "\n";
        auto opt = [](const std::optional<double>& v) {
            return v ? format_double(*v) : std::string();
        };
        for (const EpochRow& r : rows) {
            out += std::to_string(r.epoch) + "," + r.split + "," + format_double(r.loss_base) +
                   "," + opt(r.loss_meta) + "," + format_double(r.acc_train_noisy) + "," +
                   format_double(r.acc_train_true) + "," + format_double(r.acc_test) + "," +
                   opt(r.corrected_label_acc) + "," + opt(r.kl_meta) + "\n";
        }
        return out;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw ConfigError("run log: cannot open " + path + " for writing");
        out << to_csv();
    }
};

} // namespace tmlc
