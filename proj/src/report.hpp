#pragma once

#include <map>
#include <string>
#include <vector>

#include "attack.hpp"
#include "config.hpp"
#include "train.hpp"

namespace ct {

inline constexpr const char* k_version = "cubetrack 1.0.0";

std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_hex(const std::string& text);
std::string file_sha256(const std::string& path);

// Record of one command invocation. The hash covers only the reproducible
// fields (version, command, config echo, input hashes); timings and output
// hashes are informational, so reruns produce the same hash and therefore
// byte-identical artifacts.
struct RunManifest {
    std::string version;
    std::string command;
    std::map<std::string, std::string> config;
    std::map<std::string, std::string> inputs;
    std::map<std::string, std::string> outputs;
    std::map<std::string, double> timings;

    std::string hash() const;
};

RunManifest make_manifest(const std::string& command, const ConfigMap& cfg);
void add_input(RunManifest& m, const std::string& label, const std::string& path);
void write_manifest(const std::string& path, const RunManifest& m);

struct Quantiles {
    double p05 = 0.0, p25 = 0.0, p50 = 0.0, p75 = 0.0, p95 = 0.0;
};

// Nearest-rank quantiles; the input need not be sorted.
Quantiles compute_quantiles(std::vector<double> values);

void write_metrics_csv(const std::string& path, const std::vector<LogRow>& log,
                       const std::string& manifest_hash);

void write_vulnerability_csv(const std::string& path, const VulnerabilitySummary& summary,
                             const std::string& manifest_hash);
void write_vulnerability_json(const std::string& path, const VulnerabilitySummary& summary,
                              double alignment, const std::string& manifest_hash);

void write_sweep_csv(const std::string& path, const std::vector<SweepPoint>& points,
                     const std::string& manifest_hash);
void write_sweep_svg(const std::string& path, const std::vector<SweepPoint>& points,
                     const std::string& manifest_hash);

// Plain-text PGM; values are scaled linearly from [min, max] to 0..255 and
// the original range is recorded in a comment so the file stays lossless
// enough to read back qualitatively.
void write_pgm(const std::string& path, const Image& img, const std::string& manifest_hash);

}  // namespace ct
