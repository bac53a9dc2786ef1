// kvq: command-line workbench around the library. Subcommands:
//   bench     synthetic-workload decode benchmark (throughput, memory, MSE)
//   calibrate grid search for (tau1, tau2), manifest for later reuse
//   mse       per-head MSE table and pre-softmax histograms as CSV
//   selftest  in-binary property suites
// JSON goes to stdout, CSV files into --out. Exit codes: 0 success,
// 1 property failure, 2 usage error, 3 I/O error.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kvq/kvq.hpp"

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitPropertyFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

struct WorkloadFlags {
    std::size_t heads = 4;
    std::size_t n = 1024;
    std::size_t d = 64;
    std::uint64_t seed = 1;
    std::string dist = "gaussian";
    std::string mode = "channel_wise";
    int workers = 0;  // 0 = unset; falls back to KVQ_WORKERS, then hardware
    std::string out;
};

void add_workload_flags(CLI::App* cmd, WorkloadFlags& f) {
    cmd->add_option("--heads", f.heads, "Attention heads")->capture_default_str();
    cmd->add_option("--n", f.n, "Prefill tokens per head")->capture_default_str();
    cmd->add_option("--d", f.d, "Head dimension")->capture_default_str();
    cmd->add_option("--seed", f.seed, "Workload seed")->capture_default_str();
    cmd->add_option("--dist", f.dist, "Synthetic distribution")
        ->check(CLI::IsMember({"gaussian", "heavy_tailed", "outlier_channels"}))
        ->capture_default_str();
    cmd->add_option("--mode", f.mode, "Quantization stats mode")
        ->check(CLI::IsMember({"channel_wise", "global"}))
        ->capture_default_str();
    cmd->add_option("--workers", f.workers, "Worker threads (default: KVQ_WORKERS, else hardware)");
    cmd->add_option("--out", f.out, "Output directory for CSV/manifest files");
}

int resolve_workers(int flag_value) {
    if (flag_value > 0) return flag_value;
    if (const char* env = std::getenv("KVQ_WORKERS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1) {
            throw kvq::config_error("KVQ_WORKERS must be a positive integer, got '" +
                                    std::string(env) + "'");
        }
        return static_cast<int>(v);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

kvq::Distribution parse_dist(const std::string& name) {
    if (name == "gaussian") return kvq::Distribution::gaussian;
    if (name == "heavy_tailed") return kvq::Distribution::heavy_tailed;
    return kvq::Distribution::outlier_channels;
}

kvq::QuantMode parse_mode(const std::string& name) {
    return name == "global" ? kvq::QuantMode::global : kvq::QuantMode::channel_wise;
}

kvq::WorkloadSpec make_spec(const WorkloadFlags& f) {
    kvq::WorkloadSpec spec;
    spec.heads = f.heads;
    spec.tokens = f.n;
    spec.head_dim = f.d;
    spec.dist = parse_dist(f.dist);
    spec.seed = f.seed;
    spec.validate();
    return spec;
}

std::vector<int> parse_bits(const std::string& csv) {
    std::vector<int> bits;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        char* end = nullptr;
        long v = std::strtol(item.c_str(), &end, 10);
        if (end == item.c_str() || *end != '\0' ||
            (v != 1 && v != 2 && v != 4 && v != 8 && v != 16)) {
            throw kvq::config_error("--bits entries must be one of 1,2,4,8,16; got '" + item +
                                    "'");
        }
        bits.push_back(static_cast<int>(v));
    }
    if (bits.empty()) throw kvq::config_error("--bits list is empty");
    return bits;
}

std::vector<float> parse_grid_values(const std::string& csv) {
    std::vector<float> values;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        char* end = nullptr;
        float v = std::strtof(item.c_str(), &end);
        if (end == item.c_str() || *end != '\0' || !(v >= 0.0f)) {
            throw kvq::config_error("--grid entries must be reals >= 0; got '" + item + "'");
        }
        values.push_back(v);
    }
    if (values.empty()) throw kvq::config_error("--grid list is empty");
    return values;
}

std::string out_dir_or_dot(const WorkloadFlags& f) { return f.out.empty() ? "." : f.out; }

void ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw kvq::format_error("cannot create output directory " + dir, 0);
}

std::string utc_timestamp() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

ordered_json memory_json(const kvq::CacheMemory& m) {
    return ordered_json{{"code_bytes", m.code_bytes},
                        {"stats_bytes", m.stats_bytes},
                        {"quantized_bytes", m.quantized_bytes},
                        {"tail_bytes", m.tail_bytes},
                        {"fp32_vis_bytes", m.fp32_vis_bytes},
                        {"total_bytes", m.total_bytes}};
}

// Per-head 1 x d rows of one decode step, stacked heads x d.
kvq::DenseMatrix stack_rows(const std::vector<kvq::DenseMatrix>& rows) {
    kvq::DenseMatrix m(rows.size(), rows.empty() ? 0 : rows[0].cols);
    for (std::size_t h = 0; h < rows.size(); ++h) {
        for (std::size_t c = 0; c < m.cols; ++c) m.at(h, c) = rows[h].at(0, c);
    }
    return m;
}

double weights_mse(const kvq::DenseMatrix& got, const kvq::DenseMatrix& want) {
    double acc = 0.0;
    for (std::size_t i = 0; i < got.data.size(); ++i) {
        double diff = static_cast<double>(got.data[i]) - static_cast<double>(want.data[i]);
        acc += diff * diff;
    }
    return acc / static_cast<double>(got.data.size());
}

std::vector<kvq::CalibrationSample> build_calibration_set(const kvq::WorkloadSpec& base,
                                                          std::size_t samples,
                                                          const kvq::QuantizationConfig& qcfg) {
    std::vector<kvq::CalibrationSample> set;
    for (std::size_t s = 0; s < samples; ++s) {
        kvq::WorkloadSpec spec = base;
        spec.seed = base.seed + s;
        for (kvq::HeadWorkload& hw : kvq::generate(spec)) {
            kvq::CalibrationSample sample;
            sample.query.assign(hw.query.data.begin(), hw.query.data.end());
            sample.keys_quant = kvq::quantize(
                hw.keys, kvq::compute_stats(hw.keys, qcfg.mode), qcfg.bitwidth, qcfg.word_bits);
            sample.keys_exact = std::move(hw.keys);
            set.push_back(std::move(sample));
        }
    }
    return set;
}

std::string manifest_path(const std::string& dir) { return dir + "/calibration.json"; }

void write_manifest(const std::string& path, const kvq::CalibrationParams& p, int bits,
                    const WorkloadFlags& f) {
    ordered_json j{{"tau1", p.tau1}, {"tau2", p.tau2}, {"bits", bits},
                   {"seed", f.seed},  {"dist", f.dist}, {"mode", f.mode}};
    std::ofstream os(path);
    if (!os) throw kvq::format_error("cannot open for writing: " + path, 0);
    os << j.dump(2) << "\n";
    if (!os) throw kvq::format_error("write failed: " + path, 0);
}

bool read_manifest(const std::string& path, kvq::CalibrationParams& p) {
    std::ifstream is(path);
    if (!is) return false;
    ordered_json j;
    try {
        is >> j;
        p.tau1 = j.at("tau1").get<float>();
        p.tau2 = j.at("tau2").get<float>();
    } catch (const nlohmann::json::exception& e) {
        throw kvq::format_error("malformed calibration manifest " + path + ": " + e.what(), 0);
    }
    return true;
}

// ---- bench -----------------------------------------------------------------

struct BenchFlags {
    WorkloadFlags base;
    std::string bits_csv = "8";
    std::size_t steps = 16;
    std::string calibrated = "both";
};

int run_bench(const BenchFlags& f) {
    std::vector<int> bits = parse_bits(f.bits_csv);
    int workers = resolve_workers(f.base.workers);
    kvq::WorkloadSpec spec = make_spec(f.base);
    kvq::KernelConfig kcfg;
    kcfg.workers = workers;
    kvq::QuantMode mode = parse_mode(f.base.mode);

    std::vector<kvq::HeadWorkload> prefill = kvq::generate(spec);
    std::vector<kvq::DenseMatrix> ks, vs;
    for (kvq::HeadWorkload& hw : prefill) {
        ks.push_back(std::move(hw.keys));
        vs.push_back(std::move(hw.values));
    }
    std::vector<kvq::StepTokens> steps;
    steps.reserve(f.steps);
    for (std::size_t t = 0; t < f.steps; ++t) steps.push_back(kvq::generate_step(spec, t));

    // Reference pass: full-precision weights per step, used as the exact rows
    // for every variant's MSE column (the fp32 variant reproduces them and
    // lands at 0). Untimed.
    std::vector<kvq::DenseMatrix> exact_weights;
    {
        kvq::HybridKVCache ref = kvq::HybridKVCache::build_full_precision(ks, vs);
        for (const kvq::StepTokens& st : steps) {
            kvq::DenseMatrix q = stack_rows(st.query);
            exact_weights.push_back(ref.decode_step_detailed(q, kcfg).weights);
            ref.append(stack_rows(st.key), stack_rows(st.value));
        }
    }

    bool wants_calibrated = f.calibrated != "off";
    bool wants_uncalibrated = f.calibrated != "on";
    kvq::CalibrationParams cal_params;
    std::string cal_source = "none";
    bool any_quantized_calibrated = false;
    for (int b : bits) any_quantized_calibrated |= (b != 16 && wants_calibrated);
    if (any_quantized_calibrated) {
        int cal_bits = 0;
        for (int b : bits) {
            if (b != 16) {
                cal_bits = b;
                break;
            }
        }
        if (read_manifest(manifest_path(out_dir_or_dot(f.base)), cal_params)) {
            cal_source = "manifest";
        } else {
            // Small in-run search on the first quantized bitwidth.
            kvq::WorkloadSpec cal_spec = spec;
            cal_spec.tokens = std::min<std::size_t>(spec.tokens, 512);
            kvq::QuantizationConfig qcfg{cal_bits, mode, 8};
            auto set = build_calibration_set(cal_spec, 2, qcfg);
            cal_params = kvq::grid_search(set, kcfg);
            cal_source = "grid_search";
        }
    }

    ordered_json variants = ordered_json::array();
    ordered_json csv_rows = ordered_json::array();
    for (int b : bits) {
        std::vector<std::pair<bool, kvq::CalibrationParams>> runs;
        if (b == 16) {
            runs.emplace_back(false, kvq::CalibrationParams{});
        } else {
            if (wants_uncalibrated) runs.emplace_back(false, kvq::CalibrationParams{});
            if (wants_calibrated) runs.emplace_back(true, cal_params);
        }
        for (const auto& [calibrated, params] : runs) {
            auto t0 = std::chrono::steady_clock::now();
            kvq::HybridKVCache cache =
                b == 16 ? kvq::HybridKVCache::build_full_precision(ks, vs)
                        : kvq::HybridKVCache::build(ks, vs,
                                                    kvq::QuantizationConfig{b, mode, 8},
                                                    params);
            double prefill_seconds = seconds_since(t0);

            double decode_seconds = 0.0;
            double mse_sum = 0.0;
            for (std::size_t t = 0; t < steps.size(); ++t) {
                kvq::DenseMatrix q = stack_rows(steps[t].query);
                auto d0 = std::chrono::steady_clock::now();
                kvq::DenseMatrix out = cache.decode_step(q, kcfg);
                decode_seconds += seconds_since(d0);
                (void)out;
                // Weight rows for the MSE column, off the clock.
                kvq::DecodeDetail detail = cache.decode_step_detailed(q, kcfg);
                mse_sum += weights_mse(detail.weights, exact_weights[t]);
                cache.append(stack_rows(steps[t].key), stack_rows(steps[t].value));
            }

            ordered_json row{{"bitwidth", b}, {"calibrated", calibrated}};
            row["tau1"] = calibrated ? params.tau1 : 0.0f;
            row["tau2"] = calibrated ? params.tau2 : 0.0f;
            kvq::CacheMemory mem = cache.memory();
            row["memory"] = memory_json(mem);
            row["peak_bytes"] = mem.total_bytes;
            row["prefill_seconds"] = prefill_seconds;
            if (steps.empty()) {
                row["throughput"] = nullptr;
                row["mean_softmax_mse"] = nullptr;
            } else {
                double tps = static_cast<double>(steps.size()) / decode_seconds;
                row["throughput"] = ordered_json{{"steps", steps.size()},
                                                 {"decode_seconds", decode_seconds},
                                                 {"tokens_per_sec", tps}};
                row["mean_softmax_mse"] = mse_sum / static_cast<double>(steps.size());
            }
            variants.push_back(row);

            ordered_json csv_row;
            csv_row["bitwidth"] = b;
            csv_row["calibrated"] = calibrated ? 1 : 0;
            csv_row["tokens_per_sec"] =
                steps.empty() ? std::string()
                              : kvq::detail::fmt_real(static_cast<double>(steps.size()) /
                                                      decode_seconds);
            csv_row["prefill_seconds"] = kvq::detail::fmt_real(prefill_seconds);
            csv_row["quantized_bytes"] = mem.quantized_bytes;
            csv_row["tail_bytes"] = mem.tail_bytes;
            csv_row["total_bytes"] = mem.total_bytes;
            csv_row["mean_softmax_mse"] =
                steps.empty() ? std::string()
                              : kvq::detail::fmt_real(mse_sum /
                                                      static_cast<double>(steps.size()));
            csv_rows.push_back(csv_row);
        }
    }

    ordered_json report{
        {"command", "bench"},
        {"schema_version", 1},
        {"config",
         {{"bits", bits},
          {"heads", f.base.heads},
          {"tokens", f.base.n},
          {"head_dim", f.base.d},
          {"steps", f.steps},
          {"seed", f.base.seed},
          {"dist", f.base.dist},
          {"mode", f.base.mode},
          {"calibrated", f.calibrated}}},
        {"environment", {{"workers", workers}, {"timestamp", utc_timestamp()}}},
        {"calibration",
         any_quantized_calibrated
             ? ordered_json{{"tau1", cal_params.tau1},
                            {"tau2", cal_params.tau2},
                            {"source", cal_source}}
             : ordered_json(nullptr)},
        {"variants", variants}};
    std::cout << report.dump(2) << "\n";

    if (!f.base.out.empty()) {
        ensure_out_dir(f.base.out);
        std::string path = f.base.out + "/bench.csv";
        std::ofstream os(path);
        if (!os) throw kvq::format_error("cannot open for writing: " + path, 0);
        os << "bitwidth,calibrated,tokens_per_sec,prefill_seconds,quantized_bytes,tail_bytes,"
              "total_bytes,mean_softmax_mse\n";
        for (const auto& r : csv_rows) {
            os << r["bitwidth"].get<int>() << "," << r["calibrated"].get<int>() << ","
               << r["tokens_per_sec"].get<std::string>() << ","
               << r["prefill_seconds"].get<std::string>() << ","
               << r["quantized_bytes"].get<std::size_t>() << ","
               << r["tail_bytes"].get<std::size_t>() << ","
               << r["total_bytes"].get<std::size_t>() << ","
               << r["mean_softmax_mse"].get<std::string>() << "\n";
        }
        if (!os) throw kvq::format_error("write failed: " + path, 0);
    }
    return kExitOk;
}

// ---- calibrate -------------------------------------------------------------

struct CalibrateFlags {
    WorkloadFlags base;
    int bits = 1;
    std::size_t samples = 4;
    std::string grid_csv = "0,1,2,3";
};

int run_calibrate(const CalibrateFlags& f) {
    if (f.bits == 16) {
        throw kvq::config_error("calibrate needs a quantized bitwidth (1, 2, 4, or 8)");
    }
    if (f.bits != 1 && f.bits != 2 && f.bits != 4 && f.bits != 8) {
        throw kvq::config_error("--bits must be one of 1,2,4,8");
    }
    if (f.samples == 0) throw kvq::config_error("--samples must be >= 1");
    int workers = resolve_workers(f.base.workers);
    kvq::WorkloadSpec spec = make_spec(f.base);
    kvq::KernelConfig kcfg;
    kcfg.workers = workers;
    kvq::QuantizationConfig qcfg{f.bits, parse_mode(f.base.mode), 8};

    std::vector<kvq::CalibrationParams> cells = kvq::make_grid(parse_grid_values(f.grid_csv));
    std::vector<kvq::CalibrationSample> set = build_calibration_set(spec, f.samples, qcfg);
    std::vector<kvq::GridCell> table = kvq::grid_mse_table(set, cells, kcfg);
    kvq::CalibrationParams chosen = kvq::grid_search(set, cells, kcfg);

    ordered_json table_json = ordered_json::array();
    for (const kvq::GridCell& cell : table) {
        table_json.push_back(ordered_json{
            {"tau1", cell.params.tau1}, {"tau2", cell.params.tau2}, {"mse", cell.mse}});
    }
    ordered_json report{{"command", "calibrate"},
                        {"schema_version", 1},
                        {"config",
                         {{"bits", f.bits},
                          {"heads", f.base.heads},
                          {"tokens", f.base.n},
                          {"head_dim", f.base.d},
                          {"samples", f.samples},
                          {"seed", f.base.seed},
                          {"dist", f.base.dist},
                          {"mode", f.base.mode},
                          {"grid", parse_grid_values(f.grid_csv)}}},
                        {"environment", {{"workers", workers}, {"timestamp", utc_timestamp()}}},
                        {"chosen", {{"tau1", chosen.tau1}, {"tau2", chosen.tau2}}},
                        {"table", table_json}};
    std::cout << report.dump(2) << "\n";

    std::string dir = out_dir_or_dot(f.base);
    ensure_out_dir(dir);
    write_manifest(manifest_path(dir), chosen, f.bits, f.base);
    return kExitOk;
}

// ---- mse -------------------------------------------------------------------

struct MseFlags {
    WorkloadFlags base;
    int bits = 1;
    std::size_t bins = 40;
    std::string params_file;
};

int run_mse(const MseFlags& f) {
    if (f.bits != 1 && f.bits != 2 && f.bits != 4 && f.bits != 8) {
        throw kvq::config_error("--bits must be one of 1,2,4,8");
    }
    int workers = resolve_workers(f.base.workers);
    kvq::WorkloadSpec spec = make_spec(f.base);
    kvq::KernelConfig kcfg;
    kcfg.workers = workers;
    kvq::QuantizationConfig qcfg{f.bits, parse_mode(f.base.mode), 8};

    kvq::CalibrationParams params;
    std::string source;
    if (!f.params_file.empty()) {
        if (!read_manifest(f.params_file, params)) {
            throw kvq::format_error("cannot open for reading: " + f.params_file, 0);
        }
        source = "params_file";
    } else if (read_manifest(manifest_path(out_dir_or_dot(f.base)), params)) {
        source = "manifest";
    } else {
        std::vector<kvq::CalibrationSample> set = build_calibration_set(spec, 1, qcfg);
        params = kvq::grid_search(set, kcfg);
        source = "grid_search";
    }

    std::vector<kvq::HeadWorkload> heads = kvq::generate(spec);
    kvq::MseReport report = kvq::mse_report(heads, qcfg, params, f.bins, kcfg);

    std::string dir = out_dir_or_dot(f.base);
    ensure_out_dir(dir);
    std::string mse_path = dir + "/mse.csv";
    std::string hist_path = dir + "/histogram.csv";
    kvq::write_mse_csv(mse_path, report);
    kvq::write_histogram_csv(hist_path, report);

    ordered_json rows = ordered_json::array();
    for (const kvq::MseRow& r : report.rows) {
        rows.push_back(ordered_json{
            {"head", r.head}, {"mse_quant", r.mse_quant}, {"mse_quant_c", r.mse_quant_c}});
    }
    ordered_json j{{"command", "mse"},
                   {"schema_version", 1},
                   {"config",
                    {{"bits", f.bits},
                     {"heads", f.base.heads},
                     {"tokens", f.base.n},
                     {"head_dim", f.base.d},
                     {"bins", f.bins},
                     {"seed", f.base.seed},
                     {"dist", f.base.dist},
                     {"mode", f.base.mode}}},
                   {"environment", {{"workers", workers}, {"timestamp", utc_timestamp()}}},
                   {"params", {{"tau1", params.tau1}, {"tau2", params.tau2}, {"source", source}}},
                   {"mean_mse_quant", report.mean_mse_quant},
                   {"mean_mse_quant_c", report.mean_mse_quant_c},
                   {"rows", rows},
                   {"files", {{"mse_csv", mse_path}, {"histogram_csv", hist_path}}}};
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

// ---- selftest --------------------------------------------------------------

int run_selftest(bool inject_bitflip) {
    kvq::SelftestOptions opt;
    opt.inject_bitflip = inject_bitflip;
    std::vector<kvq::SelftestResult> results = kvq::run_selftests(opt);
    bool all = true;
    ordered_json suites = ordered_json::array();
    for (const kvq::SelftestResult& r : results) {
        all = all && r.passed;
        suites.push_back(
            ordered_json{{"suite", r.suite}, {"passed", r.passed}, {"detail", r.detail}});
    }
    ordered_json j{{"command", "selftest"},
                   {"schema_version", 1},
                   {"suites", suites},
                   {"all_passed", all}};
    std::cout << j.dump(2) << "\n";
    return all ? kExitOk : kExitPropertyFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Low-bit KV-cache quantization workbench"};
    app.require_subcommand(1);

    BenchFlags bench;
    CLI::App* bench_cmd = app.add_subcommand("bench", "Decode benchmark over synthetic data");
    bench_cmd->add_option("--bits", bench.bits_csv,
                          "Comma list of bitwidths (1,2,4,8; 16 = full-precision baseline)")
        ->capture_default_str();
    bench_cmd->add_option("--steps", bench.steps, "Decode steps to run")->capture_default_str();
    bench_cmd->add_option("--calibrated", bench.calibrated,
                          "Which quantized variants to run")
        ->check(CLI::IsMember({"on", "off", "both"}))
        ->capture_default_str();
    add_workload_flags(bench_cmd, bench.base);

    CalibrateFlags cal;
    CLI::App* cal_cmd = app.add_subcommand("calibrate", "Grid search for (tau1, tau2)");
    cal_cmd->add_option("--bits", cal.bits, "Quantized bitwidth")->capture_default_str();
    cal_cmd->add_option("--samples", cal.samples, "Calibration samples per head")
        ->capture_default_str();
    cal_cmd->add_option("--grid", cal.grid_csv, "Comma list of candidate tau values")
        ->capture_default_str();
    add_workload_flags(cal_cmd, cal.base);

    MseFlags mse;
    CLI::App* mse_cmd = app.add_subcommand("mse", "MSE table and score histograms");
    mse_cmd->add_option("--bits", mse.bits, "Quantized bitwidth")->capture_default_str();
    mse_cmd->add_option("--bins", mse.bins, "Histogram bins")->capture_default_str();
    mse_cmd->add_option("--params", mse.params_file, "Calibration manifest to reuse");
    add_workload_flags(mse_cmd, mse.base);

    bool inject_bitflip = false;
    CLI::App* selftest_cmd = app.add_subcommand("selftest", "Run in-binary property suites");
    selftest_cmd->add_flag("--inject-bitflip", inject_bitflip,
                           "Corrupt one packed bit to prove the roundtrip check bites");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (bench_cmd->parsed()) return run_bench(bench);
        if (cal_cmd->parsed()) return run_calibrate(cal);
        if (mse_cmd->parsed()) return run_mse(mse);
        return run_selftest(inject_bitflip);
    } catch (const kvq::config_error& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const kvq::domain_error& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const kvq::format_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitPropertyFailure;
    }
}
