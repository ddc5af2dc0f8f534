#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qal/eval.hpp"
#include "qal/fedsim.hpp"
#include "qal/train.hpp"

namespace qal {

// Long-format evaluation row: scheme,bits,metric,value,trial.
struct EvalRow {
    std::string scheme;
    int bits;
    std::string metric;
    double value;
    int trial = 0;
};

// Shortest round-trip-exact decimal form; keeps CSVs byte-stable per seed.
std::string format_double(double v);

uint64_t fnv1a64(const std::string& s);
std::string hash_hex(const std::string& s);

// Writers prepend "# config_hash: ..." and a "# generated_at: ..." line; the
// timestamp line is the one excluded from checksums.
void write_history_csv(const std::string& path, const History& history,
                       const std::string& config_hash);
void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows,
                    const std::string& config_hash);
void write_rounds_csv(const std::string& path, const std::vector<RoundLog>& rounds,
                      const std::string& config_hash);

// FNV-1a of the file contents with "# generated_at" lines dropped.
uint64_t file_checksum_excluding_timestamp(const std::string& path);

}  // namespace qal
