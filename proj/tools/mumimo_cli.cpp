// Command-line front end: train / evaluate / sweep / oracle / plot.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mumimo/harness.hpp"

using namespace mumimo;

namespace {

ScenarioConfig load_config(const std::string& path, std::uint64_t seed_override, bool has_seed,
                           const std::string& receiver_override) {
    ScenarioConfig cfg = ScenarioConfig::from_json_file(path);
    if (has_seed) cfg.seed = seed_override;
    if (!receiver_override.empty()) {
        cfg.receiver = receiver_override;
        cfg.validate();
    }
    return cfg;
}

std::string out_path(const ScenarioConfig& cfg, const std::string& explicit_out,
                     const std::string& fallback) {
    if (!explicit_out.empty()) return explicit_out;
    std::filesystem::create_directories(cfg.out_dir);
    return (std::filesystem::path(cfg.out_dir) / fallback).string();
}

int cmd_train(const ScenarioConfig& cfg, const std::string& out) {
    std::printf("generating %d training RGs...\n", cfg.train.n_rgs);
    Dataset ds = generate_dataset(cfg, cfg.train.n_rgs, split_seed(cfg.seed, 0x7141ULL));
    PilotPattern pattern = scenario_pattern(cfg);
    ReGroupPartition partition = scenario_partition(cfg, pattern);
    Constellation constellation = build_constellation(cfg.grid.m_bits);
    PilotCovariance cov = scenario_pilot_covariance(cfg);
    MlReceiverParams params =
        build_ml_receiver(cfg.grid.n_m, cfg.grid.m_bits, split_seed(cfg.seed, 0x1417ULL));
    std::printf("training: %d steps, batch %d, lr %g\n", cfg.train.tc.steps,
                cfg.train.tc.batch_size, cfg.train.tc.lr);
    TrainResult res = train(ds.samples, cfg.grid, pattern, partition, cov, constellation, params,
                            cfg.train.tc, cfg.interp);
    if (!res.loss_trace.empty())
        std::printf("loss: first %.4f last %.4f%s\n", res.loss_trace.front(),
                    res.loss_trace.back(), res.diverged ? " (diverged)" : "");
    params.save(out);
    std::printf("checkpoint written to %s\n", out.c_str());
    return res.diverged ? 1 : 0;
}

int cmd_evaluate(const ScenarioConfig& cfg, const std::string& checkpoint) {
    MlReceiverParams params;
    MlReceiverParams* pp = nullptr;
    if (cfg.receiver == "ml") {
        params = build_ml_receiver(cfg.grid.n_m, cfg.grid.m_bits, 0);
        params.load(checkpoint);
        pp = &params;
    }
    Dataset ds = generate_dataset(cfg, std::min(cfg.train.n_rgs, 50),
                                  split_seed(cfg.seed, 0xEBA1ULL));
    LossReport r = evaluate_loss(cfg, ds, cfg.receiver, pp);
    std::printf("receiver=%s loss=%.4f rate_per_user=%.2f bits/RG\n", cfg.receiver.c_str(),
                r.loss, r.rate_per_user);
    return 0;
}

int cmd_sweep(const ScenarioConfig& cfg, const std::string& checkpoint, const std::string& out) {
    MlReceiverParams params;
    MlReceiverParams* pp = nullptr;
    if (cfg.receiver == "ml") {
        params = build_ml_receiver(cfg.grid.n_m, cfg.grid.m_bits, 0);
        params.load(checkpoint);
        pp = &params;
    }
    BerReport report = run_ber_sweep(cfg, cfg.receiver, pp);
    std::string path = out.empty() ? out_path(cfg, "", "ber_" + cfg.receiver + ".csv") : out;
    write_ber_csv(path, report);
    for (const auto& p : report.points)
        std::printf("snr=%5.1f dB  coded BER %.3e  uncoded BER %.3e  (%lld bits, %d frames)\n",
                    p.snr_db, p.coded_ber, p.uncoded_ber, p.bits, p.frames);
    std::printf("CSV written to %s\n", path.c_str());
    return 0;
}

int cmd_oracle(const ScenarioConfig& cfg) {
    PilotCovariance cov = scenario_pilot_covariance(cfg);
    std::printf("pilot covariance: %dx%d, trace %.4f\n", static_cast<int>(cov.sigma.rows()),
                static_cast<int>(cov.sigma.cols()), cov.sigma.real().trace());
    std::vector<MatC> e = perfect_csi_error_cov(cfg);
    double tr = 0.0;
    for (const auto& m : e) tr += m.real().trace();
    std::printf("perfect-CSI E: %zu REs, mean trace %.6f (cached under %s)\n", e.size(),
                tr / static_cast<double>(e.size()), cfg.cache_dir.c_str());
    return 0;
}

int cmd_plot(const std::vector<std::string>& csvs, const std::string& out) {
    std::vector<BerReport> reports;
    for (const auto& path : csvs) reports.push_back(read_ber_csv(path));
    write_ber_svg(out, reports);
    std::printf("SVG written to %s\n", out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MU-MIMO OFDM uplink link-level simulator"};
    app.require_subcommand(1);

    std::string config_path, receiver, checkpoint, out;
    std::uint64_t seed = 0;
    bool has_seed = false;
    std::vector<std::string> csvs;

    auto add_common = [&](CLI::App* sub, bool need_config) {
        auto* c = sub->add_option("--config", config_path, "scenario JSON file");
        if (need_config) c->required();
        sub->add_option("--seed", seed, "master seed override")->each([&](const std::string&) {
            has_seed = true;
        });
        sub->add_option("--receiver", receiver, "baseline | ml | perfect_csi");
        sub->add_option("--checkpoint", checkpoint, "model checkpoint path");
        sub->add_option("--out", out, "output path");
    };

    auto* tr = app.add_subcommand("train", "train the ML receiver");
    add_common(tr, true);
    auto* ev = app.add_subcommand("evaluate", "loss/rate of a receiver on fresh RGs");
    add_common(ev, true);
    auto* sw = app.add_subcommand("sweep", "Monte-Carlo BER sweep, writes CSV");
    add_common(sw, true);
    auto* orc = app.add_subcommand("oracle", "build/refresh covariance caches");
    add_common(orc, true);
    auto* pl = app.add_subcommand("plot", "render BER CSVs to one SVG");
    pl->add_option("csvs", csvs, "input CSV files")->required();
    pl->add_option("--out", out, "output SVG path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (pl->parsed()) return cmd_plot(csvs, out.empty() ? "ber.svg" : out);
        ScenarioConfig cfg = load_config(config_path, seed, has_seed, receiver);
        if (tr->parsed())
            return cmd_train(cfg, out.empty() ? out_path(cfg, "", "ml_checkpoint.bin") : out);
        if ((ev->parsed() || sw->parsed()) && cfg.receiver == "ml" && checkpoint.empty()) {
            std::fprintf(stderr, "error: the ml receiver requires --checkpoint\n");
            return 2;
        }
        if (ev->parsed()) return cmd_evaluate(cfg, checkpoint);
        if (sw->parsed()) return cmd_sweep(cfg, checkpoint, out);
        if (orc->parsed()) return cmd_oracle(cfg);
    } catch (const DimensionError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
