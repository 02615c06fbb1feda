#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>

#include "attack.hpp"
#include "errors.hpp"
#include "report.hpp"
#include "rng.hpp"
#include "train.hpp"

namespace ct {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

constexpr long full_train_samples = 97020;
constexpr long full_test_samples = 20160;

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    }

private:
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

struct KeyDefault {
    const char* key;
    const char* value;
};

// The defaults table doubles as the allowed-key list; the returned map holds
// every key the command consults, so the manifest echo is complete.
ConfigMap effective_config(const ConfigMap& user, const std::vector<KeyDefault>& defaults,
                           const std::string& cmd) {
    ConfigMap eff;
    for (const auto& kd : defaults) eff.set(kd.key, kd.value);
    for (const auto& [key, value] : user.entries()) {
        if (!eff.has(key)) throw ConfigError(cmd + ": unknown key '" + key + "'");
        eff.set(key, value);
    }
    return eff;
}

std::string need(const ConfigMap& eff, const std::string& key, const std::string& cmd) {
    const std::string v = eff.get_string(key, "");
    if (v.empty()) throw ConfigError(cmd + ": missing required key '" + key + "'");
    return v;
}

fs::path make_out_dir(const ConfigMap& eff, const std::string& cmd) {
    const fs::path dir = need(eff, "out", cmd);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(cmd + ": cannot create " + dir.string() + ": " + ec.message());
    return dir;
}

void record_output(RunManifest& m, const fs::path& dir, const std::string& name) {
    m.outputs[name] = file_sha256((dir / name).string());
}

std::uint64_t derived_noise_seed(std::uint64_t dir_seed) { return mix_seed(dir_seed, 101); }

std::vector<int> parse_layers(const ConfigMap& eff) {
    const std::vector<long> raw = eff.get_longs("layers", {});
    if (raw.size() < 2) throw ConfigError("train: layers needs at least two sizes");
    std::vector<int> layers;
    for (const long v : raw) {
        if (v < 1 || v > 100000) throw ConfigError("train: layer size out of range");
        layers.push_back(static_cast<int>(v));
    }
    return layers;
}

Network load_network(const std::string& path) {
    const Checkpoint ck = load_checkpoint(path);
    Network net;
    from_checkpoint(ck, net);
    return net;
}

// Random access into a jet cache for the attack evaluators; samples are read
// one at a time so large caches never sit in memory.
JetSource cache_source(std::shared_ptr<JetCacheReader> reader, bool want_d2) {
    return [reader, want_d2](int idx) { return reader->read(static_cast<std::uint64_t>(idx), want_d2); };
}

long checked_count(const ConfigMap& eff, const JetCacheReader& reader, const std::string& cmd) {
    const long count = eff.get_long("count", 100);
    if (count < 1) throw ConfigError(cmd + ": count must be positive");
    if (count > static_cast<long>(reader.count())) {
        throw ConfigError(cmd + ": count exceeds the " + std::to_string(reader.count()) +
                          " cached samples");
    }
    return count;
}

Image vector_image(const Eigen::VectorXd& v, int grid) {
    Image img(grid);
    if (v.size() != static_cast<Eigen::Index>(img.p.size())) {
        throw ShapeError("vector length does not match the pixel grid");
    }
    Eigen::Map<Eigen::VectorXd>(img.p.data(), v.size()) = v;
    return img;
}

void write_json_file(const fs::path& path, const ordered_json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
    out.flush();
    if (!out) throw IoError("write to " + path.string() + " failed");
}

void cmd_gen(const ConfigMap& eff, RunManifest& m) {
    const fs::path dir = make_out_dir(eff, "gen");
    const double scale = eff.get_fraction("scale", 1.0);
    if (!(scale > 0.0) || scale > 1.0) throw ConfigError("gen: scale must be in (0, 1]");
    const long train_n = std::lround(static_cast<double>(full_train_samples) * scale);
    const long test_n = std::lround(static_cast<double>(full_test_samples) * scale);
    if (train_n < 1 || test_n < 1) throw ConfigError("gen: scale leaves an empty split");
    const long order = eff.get_long("order", 2);
    const double sigma = eff.get_double("sigma", 0.03);
    const std::uint64_t data_seed = eff.get_seed("seed_data", 0);
    const Camera cam;

    Stopwatch train_sw;
    build_dataset(cam, sigma, 0, train_n, static_cast<int>(order), (dir / "train.jets").string(),
                  data_seed);
    m.timings["train_jets"] = train_sw.seconds();

    Stopwatch test_sw;
    build_dataset(cam, sigma, train_n, test_n, static_cast<int>(order),
                  (dir / "test.jets").string(), data_seed);
    m.timings["test_jets"] = test_sw.seconds();

    record_output(m, dir, "train.jets");
    record_output(m, dir, "test.jets");
    std::cout << "gen: wrote " << train_n << " train and " << test_n << " test samples to "
              << dir.string() << '\n';
}

CostFlags parse_cost_flags(const ConfigMap& eff) {
    CostFlags flags;
    flags.e0 = true;
    flags.e1 = eff.get_bool("e1", false);
    flags.e2 = eff.get_bool("e2", false);
    flags.r1[0] = eff.get_bool("r1_low", false);
    flags.r1[1] = eff.get_bool("r1_mid", false);
    flags.r1[2] = eff.get_bool("r1_high", false);
    flags.r2[0] = eff.get_bool("r2_low", false);
    flags.r2[1] = eff.get_bool("r2_mid", false);
    flags.r2[2] = eff.get_bool("r2_high", false);
    flags.jacobian_c2 = eff.get_double("jacobian_c2", 0.0);
    flags.gauss_sigma = eff.get_double("gauss_sigma", 0.0);
    if (flags.jacobian_c2 < 0.0) throw ConfigError("train: jacobian_c2 must be >= 0");
    if (flags.gauss_sigma < 0.0) throw ConfigError("train: gauss_sigma must be >= 0");
    return flags;
}

void cmd_train(const ConfigMap& eff, RunManifest& m) {
    const fs::path dir = make_out_dir(eff, "train");
    const std::string train_path = need(eff, "data", "train");
    const std::string test_path = need(eff, "test", "train");
    add_input(m, "data", train_path);
    add_input(m, "test", test_path);

    TrainConfig tc;
    tc.layers = parse_layers(eff);
    tc.epochs = static_cast<int>(eff.get_long("epochs", 2000));
    tc.batches = static_cast<int>(eff.get_long("batches", 42));
    tc.lr = eff.get_double("lr", 1e-3);
    tc.low_lr_epochs = static_cast<int>(eff.get_long("low_lr_epochs", 50));
    tc.log_every = static_cast<int>(eff.get_long("log_every", 10));
    tc.exclusion_schedule = eff.get_bool("exclusion", false);
    tc.tradeoff_epoch = eff.get_bool("tradeoff", false);
    tc.flags = parse_cost_flags(eff);
    tc.init_seed = eff.get_seed("seed_init", 1);
    tc.dir_seed = eff.get_seed("seed_dirs", 2);
    tc.noise_seed = derived_noise_seed(tc.dir_seed);

    const double sigma = eff.get_double("sigma", 0.03);
    Stopwatch load_sw;
    const Dataset train = load_dataset(train_path, sigma, 0);
    const Dataset test = load_dataset(test_path, sigma, train.samples());
    m.timings["load"] = load_sw.seconds();

    const std::string resume_path = eff.get_string("resume", "");
    Stopwatch train_sw;
    TrainResult res;
    if (resume_path.empty()) {
        res = train_run(tc, train, test);
    } else {
        add_input(m, "resume", resume_path);
        const Checkpoint ck = load_checkpoint(resume_path);
        long at = eff.get_long("resume_epoch", -1);
        if (at < 0) {
            if (!ck.adam) throw ConfigError("train: checkpoint lacks the optimizer state");
            if (ck.adam->step % tc.batches != 0) {
                throw ConfigError("train: optimizer step count is not a whole epoch; pass "
                                  "resume_epoch explicitly");
            }
            at = ck.adam->step / tc.batches;
        }
        res = resume_run(tc, train, test, ck, static_cast<int>(at));
    }
    m.timings["train"] = train_sw.seconds();

    save_checkpoint((dir / "checkpoint.cnet").string(), to_checkpoint(res.net, &res.adam));
    write_metrics_csv((dir / "metrics.csv").string(), res.log, m.hash());
    record_output(m, dir, "checkpoint.cnet");
    record_output(m, dir, "metrics.csv");

    const LogRow& last = res.log.back();
    std::cout << "train: " << tc.epochs << " epochs, e_train " << last.e_train << "%, e_test "
              << last.e_test << "%\n";
}

void cmd_eval(const ConfigMap& eff, RunManifest& m) {
    const fs::path dir = make_out_dir(eff, "eval");
    const std::string ck_path = need(eff, "checkpoint", "eval");
    const std::string data_path = need(eff, "data", "eval");
    add_input(m, "checkpoint", ck_path);
    add_input(m, "data", data_path);

    const Network net = load_network(ck_path);
    const double sigma = eff.get_double("sigma", 0.03);
    Stopwatch sw;
    const Dataset ds = load_dataset(data_path, sigma, 0);
    const double e = metric_e(net, ds);
    m.timings["eval"] = sw.seconds();

    ordered_json j;
    j["manifest"] = m.hash();
    j["samples"] = ds.samples();
    j["e_percent"] = e;
    write_json_file(dir / "eval.json", j);
    record_output(m, dir, "eval.json");
    std::cout << "eval: e " << e << "% over " << ds.samples() << " samples\n";
}

void cmd_attack(const ConfigMap& eff, RunManifest& m) {
    const fs::path dir = make_out_dir(eff, "attack");
    const std::string ck_path = need(eff, "checkpoint", "attack");
    const std::string data_path = need(eff, "data", "attack");
    add_input(m, "checkpoint", ck_path);
    add_input(m, "data", data_path);

    const Network net = load_network(ck_path);
    auto reader = std::make_shared<JetCacheReader>(data_path);
    const long count = checked_count(eff, *reader, "attack");
    const long pgm_samples = std::min(eff.get_long("pgm_samples", 3), count);
    if (pgm_samples < 0) throw ConfigError("attack: pgm_samples must be >= 0");
    const JetSource src = cache_source(reader, false);

    Stopwatch sw;
    const VulnerabilitySummary summary =
        evaluate_vulnerabilities(net, src, static_cast<int>(count));
    const double alignment = mean_gradient_alignment(net, src, static_cast<int>(count));
    m.timings["attack"] = sw.seconds();

    const std::string hash = m.hash();
    write_vulnerability_csv((dir / "vulnerability.csv").string(), summary, hash);
    write_vulnerability_json((dir / "vulnerability.json").string(), summary, alignment, hash);
    record_output(m, dir, "vulnerability.csv");
    record_output(m, dir, "vulnerability.json");

    for (long s = 0; s < pgm_samples; ++s) {
        const ImageJet jet = src(static_cast<int>(s));
        const int grid = jet.base.grid;
        const std::string tag = std::to_string(s);
        const struct {
            const char* name;
            AttackSolution sol;
        } sols[] = {
            {"attack_opt_", optimal_attack(net, jet)},
            {"attack_sen_", constrained_attack(net, jet, AttackKind::sensitivity)},
            {"attack_inv_", constrained_attack(net, jet, AttackKind::invariance)},
        };
        for (const auto& entry : sols) {
            const std::string name = entry.name + tag + ".pgm";
            write_pgm((dir / name).string(), vector_image(entry.sol.direction, grid), hash);
            record_output(m, dir, name);
        }
        const Eigen::VectorXf x =
            Eigen::Map<const Eigen::VectorXd>(jet.base.p.data(), jet.base.size()).cast<float>();
        const std::string net_name = "grad_net_" + tag + ".pgm";
        write_pgm((dir / net_name).string(),
                  vector_image(input_gradient(net, x, 1).cast<double>(), grid), hash);
        record_output(m, dir, net_name);
        const std::string oracle_name = "grad_oracle_" + tag + ".pgm";
        write_pgm((dir / oracle_name).string(), oracle_gradient(jet, 1), hash);
        record_output(m, dir, oracle_name);
    }

    std::cout << "attack: " << count << " samples, mean v_max " << summary.v_max_mean
              << "%, v_sen " << summary.v_sen_mean << "%, v_inv " << summary.v_inv_mean
              << "%, alignment " << alignment << '\n';
}

void cmd_sweep(const ConfigMap& eff, RunManifest& m) {
    const fs::path dir = make_out_dir(eff, "sweep");
    const std::string ck_path = need(eff, "checkpoint", "sweep");
    const std::string data_path = need(eff, "data", "sweep");
    add_input(m, "checkpoint", ck_path);
    add_input(m, "data", data_path);

    const Network net = load_network(ck_path);
    auto reader = std::make_shared<JetCacheReader>(data_path);
    if (reader->order() != 2) throw ConfigError("sweep: needs an order-2 jet cache");
    const long count = checked_count(eff, *reader, "sweep");
    const std::vector<double> sigmas =
        eff.get_doubles("sigmas", {0.0, 0.05, 0.1, 0.15, 0.2, 0.25});
    const double render_sigma = eff.get_double("sigma", 0.03);
    const std::uint64_t seed = eff.get_seed("seed_dirs", 2);

    Stopwatch sw;
    const std::vector<SweepPoint> points = noise_sweep(net, Camera{}, render_sigma,
                                                       cache_source(reader, true),
                                                       static_cast<int>(count), sigmas, seed);
    m.timings["sweep"] = sw.seconds();

    const std::string hash = m.hash();
    write_sweep_csv((dir / "sweep.csv").string(), points, hash);
    write_sweep_svg((dir / "sweep.svg").string(), points, hash);
    record_output(m, dir, "sweep.csv");
    record_output(m, dir, "sweep.svg");

    std::cout << "sweep:";
    for (const auto& p : points) std::cout << ' ' << p.sigma << ":v_max=" << p.v_max_mean << '%';
    std::cout << '\n';
}

void cmd_render(const ConfigMap& eff, RunManifest& m) {
    const fs::path dir = make_out_dir(eff, "render");
    const long index = eff.get_long("index", 0);
    if (index < 0) throw ConfigError("render: index must be >= 0");
    const double sigma = eff.get_double("sigma", 0.03);
    const long grid = eff.get_long("grid", default_grid);
    if (grid < 2 || grid > 4096) throw ConfigError("render: grid out of range");
    const std::uint64_t data_seed = eff.get_seed("seed_data", 0);

    const std::vector<double> pts = korobov_points(index + 1, 6, lattice_phase(data_seed));
    const Cube cube = params_to_cube(sample_to_params(&pts[static_cast<std::size_t>(index) * 6]));
    Stopwatch sw;
    const Image img = rasterize(Camera{}, cube, sigma, static_cast<int>(grid));
    m.timings["render"] = sw.seconds();

    const std::string name = "render_" + std::to_string(index) + ".pgm";
    write_pgm((dir / name).string(), img, m.hash());
    record_output(m, dir, name);
    std::cout << "render: wrote " << (dir / name).string() << '\n';
}

void describe_checkpoint(const std::string& path) {
    const Checkpoint ck = load_checkpoint(path);
    std::cout << "checkpoint: layers";
    long params = 0;
    for (std::size_t l = 0; l + 1 < ck.sizes.size(); ++l) {
        params += static_cast<long>(ck.sizes[l + 1]) * (ck.sizes[l] + 1);
    }
    for (const int s : ck.sizes) std::cout << ' ' << s;
    std::cout << ", " << params << " parameters, optimizer state "
              << (ck.adam ? "present" : "absent") << '\n';
}

void describe_text_artifact(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    const std::string ext = fs::path(path).extension().string();
    if (ext == ".json") {
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("inspect: " + path + " is not valid JSON: " + e.what());
        }
        if (j.contains("hash") && j.contains("command")) {
            std::cout << "manifest: command " << j["command"].get<std::string>() << ", hash "
                      << j["hash"].get<std::string>() << ", " << j["outputs"].size()
                      << " outputs\n";
        } else {
            std::cout << j.dump(2) << '\n';
        }
        return;
    }
    std::string line, header, manifest;
    long rows = 0;
    while (std::getline(in, line)) {
        if (line.rfind("# manifest ", 0) == 0 || line.find("<!-- manifest ") != std::string::npos) {
            if (manifest.empty()) manifest = line;
            continue;
        }
        if (line.rfind("#", 0) == 0) continue;
        if (header.empty()) {
            header = line;
        } else {
            ++rows;
        }
    }
    std::cout << fs::path(path).filename().string() << ": " << header << ", " << rows
              << " data rows";
    if (!manifest.empty()) std::cout << ", " << manifest.substr(manifest.find("manifest"));
    std::cout << '\n';
}

void cmd_inspect(const ConfigMap& eff) {
    const std::string path = need(eff, "path", "inspect");
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IoError("inspect: cannot open " + path);
    char magic[4] = {};
    probe.read(magic, 4);
    probe.close();
    const std::string tag(magic, 4);
    if (tag == "CJET") {
        const JetCacheReader reader(path);
        std::cout << "jet cache: " << reader.count() << " samples, grid " << reader.grid()
                  << ", order " << reader.order() << '\n';
    } else if (tag == "CNET") {
        describe_checkpoint(path);
    } else {
        describe_text_artifact(path);
    }
}

}  // namespace

void run_command(const std::string& name, const ConfigMap& cfg) {
    ConfigMap merged;
    const std::string config_path = cfg.get_string("config", "");
    if (!config_path.empty()) merged = parse_config_file(config_path);
    for (const auto& [key, value] : cfg.entries()) {
        if (key != "config") merged.set(key, value);
    }

    if (name == "inspect") {
        cmd_inspect(effective_config(merged, {{"path", ""}}, "inspect"));
        return;
    }

    struct CmdSpec {
        std::initializer_list<KeyDefault> defaults;
        void (*run)(const ConfigMap&, RunManifest&);
    };
    static const std::map<std::string, CmdSpec> table = {
        {"gen",
         {{{"out", ""}, {"scale", "1"}, {"order", "2"}, {"sigma", "0.03"}, {"seed_data", "0"}},
          cmd_gen}},
        {"train",
         {{{"out", ""},       {"data", ""},          {"test", ""},
           {"layers", "1681,256,256,256,128,9"},     {"epochs", "2000"},
           {"batches", "42"}, {"lr", "0.001"},       {"low_lr_epochs", "50"},
           {"log_every", "10"}, {"e1", "false"},     {"e2", "false"},
           {"exclusion", "false"}, {"tradeoff", "false"}, {"r1_low", "false"},
           {"r1_mid", "false"}, {"r1_high", "false"}, {"r2_low", "false"},
           {"r2_mid", "false"}, {"r2_high", "false"}, {"jacobian_c2", "0"},
           {"gauss_sigma", "0"}, {"seed_init", "1"}, {"seed_dirs", "2"},
           {"sigma", "0.03"},  {"resume", ""},       {"resume_epoch", "-1"}},
          cmd_train}},
        {"eval",
         {{{"out", ""}, {"checkpoint", ""}, {"data", ""}, {"sigma", "0.03"}}, cmd_eval}},
        {"attack",
         {{{"out", ""}, {"checkpoint", ""}, {"data", ""}, {"count", "100"}, {"pgm_samples", "3"}},
          cmd_attack}},
        {"sweep",
         {{{"out", ""}, {"checkpoint", ""}, {"data", ""}, {"count", "100"},
           {"sigmas", "0,0.05,0.1,0.15,0.2,0.25"}, {"sigma", "0.03"}, {"seed_dirs", "2"}},
          cmd_sweep}},
        {"render",
         {{{"out", ""}, {"index", "0"}, {"sigma", "0.03"}, {"grid", "41"}, {"seed_data", "0"}},
          cmd_render}},
    };
    const auto it = table.find(name);
    if (it == table.end()) throw ConfigError("unknown command '" + name + "'");

    const ConfigMap eff = effective_config(merged, it->second.defaults, name);
    RunManifest m = make_manifest(name, eff);
    if (!config_path.empty()) add_input(m, "config_file", config_path);
    Stopwatch total;
    it->second.run(eff, m);
    m.timings["total"] = total.seconds();
    write_manifest((fs::path(need(eff, "out", name)) / "manifest.json").string(), m);
}

}  // namespace ct
