#include "qal/report.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "qal/errors.hpp"

namespace qal {

std::string format_double(double v) {
    char buf[40];
    // %.17g round-trips any double; trim to the shortest exact form.
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hash_hex(const std::string& s) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(s)));
    return buf;
}

namespace {

std::ofstream open_report(const std::string& path, const std::string& config_hash) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report file: " + path);
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    out << "# config_hash: " << config_hash << "\n";
    out << "# generated_at: "
        << std::chrono::duration_cast<std::chrono::seconds>(now).count() << "\n";
    return out;
}

}  // namespace

void write_history_csv(const std::string& path, const History& history,
                       const std::string& config_hash) {
    std::ofstream out = open_report(path, config_hash);
    out << "epoch,split,bits,metric,value\n";
    for (const HistoryRow& r : history) {
        out << r.epoch << "," << r.split << "," << r.bits << "," << r.metric << ","
            << format_double(r.value) << "\n";
    }
}

void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows,
                    const std::string& config_hash) {
    std::ofstream out = open_report(path, config_hash);
    // Sign conventions: accuracy disparity = float - quantized, ASR disparity
    // = quantized - float, both in percentage points.
    out << "scheme,bits,metric,value,trial\n";
    for (const EvalRow& r : rows) {
        out << r.scheme << "," << r.bits << "," << r.metric << "," << format_double(r.value)
            << "," << r.trial << "\n";
    }
}

void write_rounds_csv(const std::string& path, const std::vector<RoundLog>& rounds,
                      const std::string& config_hash) {
    std::ofstream out = open_report(path, config_hash);
    out << "round,selected_ids,malicious_count,metric,bits,value\n";
    for (const RoundLog& r : rounds) {
        std::ostringstream ids;
        for (size_t i = 0; i < r.selected.size(); ++i) {
            if (i) ids << "|";
            ids << r.selected[i];
        }
        const std::string prefix =
            std::to_string(r.round) + "," + ids.str() + "," + std::to_string(r.malicious_selected);
        out << prefix << ",accuracy,32," << format_double(r.float_accuracy) << "\n";
        for (const auto& [bits, acc] : r.quant_accuracy) {
            out << prefix << ",accuracy," << bits << "," << format_double(acc) << "\n";
        }
        for (const auto& [bits, asr] : r.quant_asr) {
            out << prefix << ",asr," << bits << "," << format_double(asr) << "\n";
        }
    }
}

uint64_t file_checksum_excluding_timestamp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read report file: " + path);
    std::string line, acc;
    while (std::getline(in, line)) {
        if (line.rfind("# generated_at", 0) == 0) continue;
        acc += line;
        acc += '\n';
    }
    return fnv1a64(acc);
}

}  // namespace qal
