#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "restopo/experiments.hpp"

using namespace restopo;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void print_summary(const RunRecord& rec) {
    std::printf("%-16s %8s %10s %10s %9s %10s %12s\n", "curve", "lr/dt", "verdict", "rate/pow", "R^2", "it@1e-06",
                "final loss");
    for (const auto& c : rec.curves) {
        const std::string kind = c.verdict ? to_string(c.verdict->kind) : "n/a";
        const std::string rate = c.verdict ? format_number(c.verdict->rate_or_power, 4) : "-";
        const std::string r2 = c.verdict ? format_number(c.verdict->fit_quality, 6) : "-";
        const auto& it6 = c.iterations_to[2];
        std::printf("%-16s %8s %10s %10s %9s %10s %12s\n", c.name.c_str(), format_number(c.lr, 3).c_str(),
                    kind.c_str(), rate.c_str(), r2.c_str(), it6 ? std::to_string(*it6).c_str() : "inf",
                    format_number(c.final_loss, 4).c_str());
    }
    for (const auto& i : rec.invariants)
        std::printf("[%s] %s (margin %s) %s\n", i.passed ? "PASS" : "FAIL", i.name.c_str(),
                    format_number(i.margin, 4).c_str(), i.detail.c_str());
    if (!rec.directory.empty()) std::printf("run directory: %s\n", rec.directory.string().c_str());
    std::printf("wall clock: %.2f s\n", rec.wall_clock_seconds);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Residual-topology experiments on deep linear networks"};
    app.require_subcommand(1);

    auto* run_cmd = app.add_subcommand("run", "Run a preset or a JSON config");
    std::string config_path, preset_name, out_dir;
    std::uint64_t seed = 0;
    unsigned jobs = 0;
    auto* config_opt = run_cmd->add_option("--config", config_path, "JSON config file");
    auto* preset_opt = run_cmd->add_option("--preset", preset_name, "Preset name");
    config_opt->excludes(preset_opt);
    auto* seed_opt = run_cmd->add_option("--seed", seed, "Seed override");
    auto* out_opt = run_cmd->add_option("--out", out_dir, "Output directory");
    run_cmd->add_option("--jobs", jobs, "Worker threads (0 = all cores)");

    auto* cmp_cmd = app.add_subcommand("compare", "Iterations-to-threshold table across run records");
    std::vector<std::string> record_paths;
    cmp_cmd->add_option("records", record_paths, "record.json files")->required();

    auto* verify_cmd = app.add_subcommand("verify", "Run a witness preset; exit 0 iff every invariant passes");
    std::string verify_preset;
    verify_cmd->add_option("--preset", verify_preset, "lb-witness or ub-witness")
        ->required()
        ->check(CLI::IsMember({"lb-witness", "ub-witness"}));
    auto* vseed_opt = verify_cmd->add_option("--seed", seed, "Seed override");
    auto* vout_opt = verify_cmd->add_option("--out", out_dir, "Output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) {
            ExperimentConfig cfg;
            if (*config_opt)
                cfg = config_from_json(read_file(config_path));
            else if (*preset_opt)
                cfg = preset_config(parse_preset(preset_name));
            else
                throw std::invalid_argument("run: give --config or --preset");
            if (*seed_opt) cfg.seed = seed;
            if (*out_opt) cfg.output_dir = out_dir;
            cfg.validate();
            print_summary(run(cfg, jobs));
            return 0;
        }
        if (cmp_cmd->parsed()) {
            std::vector<std::string> texts;
            for (const auto& p : record_paths) texts.push_back(read_file(p));
            std::cout << compare(texts).to_text();
            return 0;
        }
        if (verify_cmd->parsed()) {
            ExperimentConfig cfg = preset_config(parse_preset(verify_preset));
            if (*vseed_opt) cfg.seed = seed;
            if (*vout_opt) cfg.output_dir = out_dir;
            const RunRecord rec = run(cfg);
            print_summary(rec);
            return rec.invariants_pass() ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "restopo: %s\n", e.what());
        return 2;
    }
    return 0;
}
