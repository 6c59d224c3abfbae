// Command line front end: synthetic corpus generation, training, evaluation
// and the analysis suite. Exit codes: 0 success, 2 configuration error,
// 3 I/O error, 4 numeric error, 5 artifact incompatibility.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "mtom/analyze.hpp"
#include "mtom/config.hpp"
#include "mtom/data.hpp"
#include "mtom/gradsuite.hpp"
#include "mtom/model.hpp"
#include "mtom/train.hpp"

namespace fs = std::filesystem;
using namespace mtom;

namespace {

int read_thread_env() {
    // computation is single threaded; the variable is accepted so wrappers
    // that always set it keep working
    const char* env = std::getenv("MTOM_THREADS");
    if (!env) return 1;
    try {
        const int n = std::stoi(env);
        if (n < 1) throw std::invalid_argument(env);
        return n;
    } catch (const std::exception&) {
        throw ConfigError("MTOM_THREADS must be a positive integer");
    }
}

std::vector<Episode> load_episode_list(const fs::path& list_file) {
    std::vector<Episode> eps;
    const fs::path base = list_file.parent_path();
    for (const auto& rel : load_path_list(list_file)) {
        fs::path p(rel);
        if (p.is_relative()) p = base / p;
        eps.push_back(normalize_features(load_episode(p)));
    }
    if (eps.empty()) throw DataError("episode list '" + list_file.string() + "' is empty");
    return eps;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
    os << text;
    if (!os) throw DataError("write error on '" + path.string() + "'");
}

int cmd_generate(const std::string& config_path, const std::string& out_override) {
    RunConfig cfg = load_run_config(config_path);
    const fs::path out = out_override.empty() ? fs::path(cfg.out_dir) : fs::path(out_override);
    if (out.empty()) throw ConfigError("generate: no output directory given");
    fs::create_directories(out);

    GeneratedCorpus corpus = generate_synthetic(cfg.synth);
    std::vector<std::string> names;
    for (const auto& ge : corpus.episodes) {
        const std::string name = ge.episode.id + ".mtep";
        save_episode(ge.episode, out / name);
        names.push_back(name);
    }
    SplitSpec splits = default_splits(names);
    save_path_list(splits.train, out / "train.txt");
    save_path_list(splits.val, out / "val.txt");
    save_path_list(splits.test, out / "test.txt");
    write_text(out / "config.txt", format_run_config(cfg));
    std::cout << "wrote " << names.size() << " episodes to " << out.string() << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
    RunConfig cfg = load_run_config(config_path);
    const fs::path data = data_dir.empty() ? fs::path(cfg.data_dir) : fs::path(data_dir);
    const fs::path out = out_dir.empty() ? fs::path(cfg.out_dir) : fs::path(out_dir);
    if (data.empty()) throw ConfigError("train: no data directory given");
    if (out.empty()) throw ConfigError("train: no output directory given");
    fs::create_directories(out);

    std::vector<Episode> train_eps = load_episode_list(data / "train.txt");
    std::vector<Episode> val_eps;
    if (fs::exists(data / "val.txt")) val_eps = load_episode_list(data / "val.txt");

    MToMnet<float> model(cfg.model, cfg.train.seed);
    std::ofstream log(out / "train_log.csv");
    if (!log) throw DataError("cannot open training log for writing");
    log << "epoch,train_loss,val_metric\n";
    TrainResult res =
        train(model, train_eps, val_eps, cfg.train, out / "checkpoint.mtom", &log);
    write_text(out / "config.txt", format_run_config(cfg));
    std::cout << "best_epoch = " << res.best_epoch << "\n";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", res.best_metric);
    std::cout << "best_metric = " << buf << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& list_path) {
    auto [model, meta] = load_checkpoint<float>(ckpt_path);
    std::vector<Episode> eps = load_episode_list(list_path);
    EvalResult res = evaluate(model, eps);
    std::cout << "mode = " << mode_name(model.config().mode) << "\n";
    std::cout << "samples = " << res.samples << "\n";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", res.metric);
    std::cout << (model.config().mode == DatasetMode::Boss ? "accuracy = " : "macro_f1 = ")
              << buf << "\n";
    return 0;
}

int cmd_analyze_pca(const std::string& ckpt_path, const std::string& list_path,
                    const std::string& out_file) {
    auto [model, meta] = load_checkpoint<float>(ckpt_path);
    std::vector<Episode> eps = load_episode_list(list_path);
    const bool boss = model.config().mode == DatasetMode::Boss;

    std::vector<double> samples;
    std::vector<std::int32_t> labels;
    std::size_t n = 0, dim = 0;
    Rng dummy(0);
    for (const auto& ep : eps) {
        if (boss) {
            Tape<float> tape;
            BeliefOutput<float> out = model.forward(tape, ep, 0, ep.t_len, false, dummy);
            for (std::size_t t = 0; t < ep.t_len; ++t) {
                if (model.config().fused()) {
                    const Tensor<float>& z = out.state1.fused[t];
                    dim = z.numel();
                    for (std::size_t i = 0; i < dim; ++i)
                        samples.push_back(static_cast<double>(z.value()[i]));
                } else {
                    dim = out.state1.hidden.dim(1);
                    const float* row = out.state1.hidden.value().data() + t * dim;
                    for (std::size_t i = 0; i < dim; ++i)
                        samples.push_back(static_cast<double>(row[i]));
                }
                labels.push_back(ep.boss_labels[0][t]);
                ++n;
            }
        } else {
            for (const Clip& clip : make_clips(ep)) {
                Tape<float> tape;
                BeliefOutput<float> out =
                    model.forward(tape, ep, clip.start, kClipLen, false, dummy);
                const Tensor<float>& z = model.config().fused()
                                             ? out.state1.fused[kClipLen - 1]
                                             : out.state1.cell;
                dim = z.numel();
                for (std::size_t i = 0; i < z.numel(); ++i)
                    samples.push_back(static_cast<double>(z.value()[i]));
                labels.push_back(clip.labels[0]);
                ++n;
            }
        }
    }
    PcaResult pca = pca_project(samples, n, dim, &labels);

    std::ostringstream os;
    os << "samples = " << n << "\n";
    os << "dim = " << dim << "\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9f %.9f", pca.explained_variance_ratio[0],
                  pca.explained_variance_ratio[1]);
    os << "explained_variance_ratio = " << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.6f", pca.separability);
    os << "separability = " << buf << "\n";
    for (std::size_t i = 0; i < n; ++i) {
        std::snprintf(buf, sizeof buf, "%.9f %.9f %d", pca.projected[i][0],
                      pca.projected[i][1], labels[i]);
        os << buf << "\n";
    }
    if (out_file.empty()) {
        std::cout << os.str();
    } else {
        write_text(out_file, os.str());
        char sep[48];
        std::snprintf(sep, sizeof sep, "separability = %.6f\n", pca.separability);
        std::cout << sep;
    }
    return 0;
}

int cmd_analyze_fb(const std::string& ckpt_path, const std::string& list_path) {
    auto [model, meta] = load_checkpoint<float>(ckpt_path);
    if (model.config().mode != DatasetMode::Tbd)
        throw IncompatError("false-belief analysis needs a tbd-mode checkpoint");
    std::vector<Episode> eps = load_episode_list(list_path);
    EvalResult res = evaluate(model, eps);
    std::cout << format_false_belief_report(false_belief_accuracy(res.outcomes));
    return 0;
}

std::vector<double> load_number_list(const fs::path& file) {
    std::ifstream is(file);
    if (!is) throw DataError("cannot open '" + file.string() + "'");
    std::vector<double> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        try {
            out.push_back(std::stod(line));
        } catch (const std::exception&) {
            throw DataError("'" + file.string() + "': not a number: '" + line + "'");
        }
    }
    return out;
}

int cmd_analyze_ttest(const std::string& file_a, const std::string& file_b) {
    TTestResult res = paired_t_test(load_number_list(file_a), load_number_list(file_b));
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9f", res.t);
    std::cout << "t = " << buf << "\n";
    std::cout << "df = " << res.df << "\n";
    std::snprintf(buf, sizeof buf, "%.9f", res.p);
    std::cout << "p = " << buf << "\n";
    if (res.degenerate) std::cout << "degenerate = true\n";
    return 0;
}

int cmd_count_params(const std::string& config_path) {
    RunConfig cfg = load_run_config(config_path);
    MToMnet<float> model(cfg.model, 1);
    ParamBreakdown b = count_parameters(model);
    std::cout << "extractors = " << b.extractors << "\n";
    std::cout << "lstm = " << b.lstm << "\n";
    std::cout << "fusion = " << b.fusion << "\n";
    std::cout << "heads = " << b.heads << "\n";
    std::cout << "total = " << b.total() << "\n";
    if (auto ref = reference_param_total(cfg.model)) {
        const double dev = std::abs(static_cast<double>(b.total()) -
                                    static_cast<double>(*ref)) /
                           static_cast<double>(*ref);
        char buf[80];
        std::snprintf(buf, sizeof buf, "reference = %zu\ndeviation = %.4f\nwithin_5pct = %s\n",
                      *ref, dev, dev <= 0.05 ? "yes" : "no");
        std::cout << buf;
    }
    return 0;
}

int cmd_gradcheck() {
    double worst = 0.0;
    for (const auto& e : run_gradient_suite()) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%-18s checked=%-5zu max_rel_err=%.3e", e.name.c_str(),
                      e.result.checked, e.result.max_rel_err);
        std::cout << buf << "\n";
        worst = std::max(worst, e.result.max_rel_err);
    }
    char buf[48];
    std::snprintf(buf, sizeof buf, "worst = %.3e", worst);
    std::cout << buf << "\n";
    if (worst > 1e-4) throw TensorError("gradient check failed");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mtom: multimodal theory-of-mind models"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_dir, ckpt_path, list_path, out_file;
    std::string file_a, file_b;

    auto* gen = app.add_subcommand("generate", "generate a synthetic corpus");
    gen->add_option("--config", config_path, "run configuration file")->required();
    gen->add_option("--out", out_dir, "output directory");

    auto* tr = app.add_subcommand("train", "train a model");
    tr->add_option("--config", config_path, "run configuration file")->required();
    tr->add_option("--data", data_dir, "corpus directory with split lists");
    tr->add_option("--out", out_dir, "run output directory");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    ev->add_option("--data", list_path, "episode list file")->required();

    auto* an = app.add_subcommand("analyze", "analysis utilities");
    an->require_subcommand(1);
    auto* pca = an->add_subcommand("pca", "project representations to 2d");
    pca->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    pca->add_option("--data", list_path, "episode list file")->required();
    pca->add_option("--out", out_file, "projection output file");
    auto* fb = an->add_subcommand("false-belief", "false-belief accuracy report");
    fb->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    fb->add_option("--data", list_path, "episode list file")->required();
    auto* tt = an->add_subcommand("ttest", "paired two-sided t-test");
    tt->add_option("--a", file_a, "first metric file, one value per line")->required();
    tt->add_option("--b", file_b, "second metric file")->required();
    auto* cp = an->add_subcommand("count-params", "parameter count breakdown");
    cp->add_option("--config", config_path, "run configuration file")->required();
    auto* gc = an->add_subcommand("gradcheck", "finite difference gradient check");
    (void)gc;

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        read_thread_env();
        if (gen->parsed()) return cmd_generate(config_path, out_dir);
        if (tr->parsed()) return cmd_train(config_path, data_dir, out_dir);
        if (ev->parsed()) return cmd_eval(ckpt_path, list_path);
        if (an->parsed()) {
            if (pca->parsed()) return cmd_analyze_pca(ckpt_path, list_path, out_file);
            if (fb->parsed()) return cmd_analyze_fb(ckpt_path, list_path);
            if (tt->parsed()) return cmd_analyze_ttest(file_a, file_b);
            if (cp->parsed()) return cmd_count_params(config_path);
            if (gc->parsed()) return cmd_gradcheck();
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IncompatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const TensorError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
