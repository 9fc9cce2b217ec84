#include "cli.hpp"

#include <chrono>
#include <filesystem>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "micpq/dataio.hpp"
#include "micpq/error.hpp"
#include "micpq/evaluation.hpp"
#include "micpq/retrieval.hpp"
#include "micpq/trainer.hpp"

namespace micpq::cli {

namespace fs = std::filesystem;

namespace {

/// Plain key=value files: keys without a section belong to the subcommand
/// being run, so `lambda = 0.2` configures `train --lambda`.
class SubcommandConfig : public CLI::ConfigBase {
public:
    explicit SubcommandConfig(const CLI::App& app) : app_(app) {}

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        auto items = CLI::ConfigBase::from_config(input);
        const auto subs = app_.get_subcommands();
        if (subs.empty()) return items;
        for (auto& item : items) {
            if (item.parents.empty() && item.name != "config") item.parents = {subs.front()->get_name()};
        }
        return items;
    }

private:
    const CLI::App& app_;
};

std::size_t default_threads() { return std::max<std::size_t>(1, std::thread::hardware_concurrency()); }

struct Shared {
    std::uint64_t seed = 0;
    std::size_t threads = default_threads();
};

void add_shared(CLI::App* sub, Shared& s) {
    sub->add_option("--seed", s.seed, "Root random seed")->capture_default_str();
    sub->add_option("--threads", s.threads, "Worker thread cap")->check(CLI::PositiveNumber);
}

void require_parent_dir(const fs::path& p) {
    const auto parent = p.has_parent_path() ? p.parent_path() : fs::path(".");
    if (!fs::is_directory(parent)) {
        throw Error(ErrorCode::IoFailure, "output directory '" + parent.string() + "' does not exist");
    }
}

struct SynthArgs {
    Shared shared;
    MixtureSpec spec{2000, 32, 4, 20.0, 1.0, 0};
    fs::path out;
    bool split = false;
    double train_frac = 0.8;
    double val_frac = 0.1;
};

int cmd_synth(SynthArgs& a, std::ostream& out) {
    a.spec.seed = a.shared.seed;
    fs::create_directories(a.out);
    const auto [x, labels] = synth_mixture(a.spec);
    if (!a.split) {
        write_embeddings(x, a.out / "corpus.emb");
        write_labels(labels, a.out / "corpus.lbl");
        out << "wrote " << x.rows() << " x " << x.cols() << " to " << (a.out / "corpus.emb").string() << '\n';
        return 0;
    }
    const auto s = split_indices(x.rows(), a.train_frac, a.val_frac, a.shared.seed);
    const std::pair<const char*, const std::vector<std::size_t>*> parts[] = {
        {"train", &s.train}, {"val", &s.val}, {"test", &s.test}};
    for (const auto& [name, rows] : parts) {
        if (rows->empty()) continue;
        const std::span<const std::size_t> r(*rows);
        write_embeddings(gather_rows(x, r), a.out / (std::string(name) + ".emb"));
        write_labels(gather_labels(labels, r), a.out / (std::string(name) + ".lbl"));
        out << "wrote " << rows->size() << " x " << x.cols() << " to "
            << (a.out / (std::string(name) + ".emb")).string() << '\n';
    }
    return 0;
}

struct TrainArgs {
    Shared shared;
    TrainConfig cfg;
    std::optional<double> tau_gumbel;
    fs::path emb, val, out, log;
};

int cmd_train(TrainArgs& a, std::ostream& out) {
    require_parent_dir(a.out);
    auto cfg = a.cfg;
    cfg.seed = a.shared.seed;
    cfg.loss.tau_gumbel = a.tau_gumbel ? *a.tau_gumbel : default_tau_gumbel(cfg.n_codebooks, cfg.n_codewords);
    cfg.checkpoint_path = a.out;
    validate(cfg);
    const auto data = read_embeddings(a.emb);
    std::optional<EmbeddingMatrix> val;
    if (!a.val.empty()) val = read_embeddings(a.val);

    out << "MICPQ training: M=" << cfg.n_codebooks << " K=" << cfg.n_codewords << " sub_dim=" << cfg.sub_dim << " ("
        << cfg.code_bits() << "-bit codes), tau_gumbel=" << cfg.loss.tau_gumbel << " lambda=" << cfg.loss.lambda
        << " docs=" << data.rows() << " epochs=" << cfg.n_epochs << '\n';
    const auto res = train(cfg, data, val ? &*val : nullptr, [&](const EpochRecord& e) {
        out << "epoch " << e.epoch + 1 << '/' << cfg.n_epochs << " total=" << e.total_loss
            << " contrastive=" << e.contrastive_loss << " mi=" << e.mi_sum << " usage_entropy=" << e.usage_entropy;
        if (e.val_loss) out << " val_total=" << *e.val_loss;
        out << '\n';
    });
    const auto log_path = a.log.empty() ? fs::path(a.out.string() + ".log") : a.log;
    res.log.write(log_path);
    out << "checkpoint " << a.out.string() << "\nlog " << log_path.string() << '\n';
    return 0;
}

struct IndexArgs {
    Shared shared;
    fs::path model, emb, out;
};

int cmd_index(IndexArgs& a, std::ostream& out) {
    require_parent_dir(a.out);
    const auto model = load_checkpoint(a.model);
    const auto corpus = read_embeddings(a.emb);
    const auto index = build_index(model, corpus);
    write_index(index, a.out);
    out << "indexed " << index.n_docs() << " documents, " << index.code_bytes() << " bytes per code\n";
    return 0;
}

SearchMode parse_mode(const std::string& m) { return m == "hamming" ? SearchMode::Hamming : SearchMode::Adc; }

void require_mode_fits(SearchMode mode, const RetrievalIndex& index) {
    if (mode == SearchMode::Hamming && index.n_codewords() != 2) {
        throw Error(ErrorCode::KNot2, "hamming mode requires K=2, index has K=" + std::to_string(index.n_codewords()));
    }
}

struct SearchArgs {
    Shared shared;
    fs::path model, index, queries;
    std::size_t k = 100;
    std::string mode = "adc";
};

int cmd_search(SearchArgs& a, std::ostream& out) {
    const auto model = load_checkpoint(a.model);
    const auto index = read_index(a.index);
    const auto queries = read_embeddings(a.queries);
    const auto mode = parse_mode(a.mode);
    require_mode_fits(mode, index);
    const auto hits = search_all(index, queries, model, a.k, mode, a.shared.threads);
    std::ostringstream os;
    os << std::setprecision(9);
    for (std::size_t q = 0; q < hits.size(); ++q) {
        for (std::size_t r = 0; r < hits[q].size(); ++r) {
            os << q << '\t' << r + 1 << '\t' << hits[q][r].doc_id << '\t' << hits[q][r].distance << '\n';
        }
    }
    out << os.str();
    return 0;
}

struct EvalArgs {
    Shared shared;
    fs::path model, index, queries, query_labels, labels, emb, report;
    std::size_t k = 100;
    std::string mode = "adc";
    bool clustering = false;
    bool timing = false;
};

int cmd_eval(EvalArgs& a, std::ostream& out) {
    if (!a.report.empty()) require_parent_dir(a.report);
    const auto model = load_checkpoint(a.model);
    const auto index = read_index(a.index);
    const auto queries = read_embeddings(a.queries);
    const auto qlabels = read_labels(a.query_labels);
    const auto clabels = read_labels(a.labels);
    check_paired(queries, qlabels);
    const auto mode = parse_mode(a.mode);
    require_mode_fits(mode, index);

    EvalReport rep;
    rep.k = a.k;
    rep.n_queries = queries.rows();
    rep.mode = a.mode;
    const auto t0 = std::chrono::steady_clock::now();
    const auto hits = search_all(index, queries, model, a.k, mode, a.shared.threads);
    rep.search_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.precision_at_k = precision_at_k(hit_ids(hits), qlabels.labels, clabels.labels, a.k);
    if (a.clustering) {
        const auto corpus = read_embeddings(a.emb);
        rep.codewords = evaluate_codeword_quality(model, corpus, clabels, a.shared.seed);
    }
    out << rep.to_text(a.timing);
    if (!a.report.empty()) rep.write(a.report, a.timing);
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app("Mutual-information-improved contrastive product quantization", "micpq");
    app.fallthrough();
    app.require_subcommand(1);
    app.set_config("--config", "", "key=value file; command-line flags take precedence");
    app.config_formatter(std::make_shared<SubcommandConfig>(app));

    SynthArgs sy;
    auto* synth = app.add_subcommand("synth", "Write a Gaussian-mixture corpus");
    add_shared(synth, sy.shared);
    synth->add_option("--n", sy.spec.n_docs, "Documents")->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--dim", sy.spec.dim, "Dimension")->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--classes", sy.spec.n_classes, "Classes")->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--sep", sy.spec.separation, "Center scale")->capture_default_str();
    synth->add_option("--sigma", sy.spec.noise_sigma, "Noise scale")->capture_default_str();
    synth->add_option("--out", sy.out, "Output directory")->required();
    synth->add_flag("--split", sy.split, "Write train/val/test files instead of one corpus");
    synth->add_option("--train-frac", sy.train_frac, "Train fraction with --split")->capture_default_str();
    synth->add_option("--val-frac", sy.val_frac, "Validation fraction with --split")->capture_default_str();

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train encoder and codebooks");
    add_shared(train_cmd, tr.shared);
    train_cmd->add_option("--emb", tr.emb, "Training embeddings")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--val", tr.val, "Validation embeddings")->check(CLI::ExistingFile);
    train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
    train_cmd->add_option("--log", tr.log, "Training log path (default: <out>.log)");
    train_cmd->add_option("--M", tr.cfg.n_codebooks, "Codebooks")->capture_default_str();
    train_cmd->add_option("--K", tr.cfg.n_codewords, "Codewords per book")->capture_default_str();
    train_cmd->add_option("--sub-dim", tr.cfg.sub_dim, "Codeword dimension")->capture_default_str();
    train_cmd->add_option("--batch-size", tr.cfg.batch_size, "Mini-batch size")->capture_default_str();
    train_cmd->add_option("--epochs", tr.cfg.n_epochs, "Epochs")->capture_default_str();
    train_cmd->add_option("--lambda", tr.cfg.loss.lambda, "MI weight")->capture_default_str();
    train_cmd->add_option("--alpha", tr.cfg.loss.alpha, "Conditional entropy weight")->capture_default_str();
    train_cmd->add_option("--tau-cl", tr.cfg.loss.tau_cl, "Contrastive temperature")->capture_default_str();
    train_cmd->add_option("--tau-gumbel", tr.tau_gumbel, "Gumbel-softmax temperature (default 10 at 16 bits, else 5)");
    train_cmd->add_option("--p-drop", tr.cfg.loss.p_drop, "Dropout rate for views")->capture_default_str();
    train_cmd->add_option("--lr", tr.cfg.adam.learning_rate, "Adam learning rate")->capture_default_str();
    train_cmd->add_option("--checkpoint-every", tr.cfg.checkpoint_every, "Epochs between checkpoints (0 = end only)")
        ->capture_default_str();

    IndexArgs ix;
    auto* index_cmd = app.add_subcommand("index", "Encode a corpus into a retrieval index");
    add_shared(index_cmd, ix.shared);
    index_cmd->add_option("--model", ix.model, "Checkpoint")->required()->check(CLI::ExistingFile);
    index_cmd->add_option("--emb", ix.emb, "Corpus embeddings")->required()->check(CLI::ExistingFile);
    index_cmd->add_option("--out", ix.out, "Index path")->required();

    SearchArgs se;
    auto* search_cmd = app.add_subcommand("search", "Rank indexed documents for each query row");
    add_shared(search_cmd, se.shared);
    search_cmd->add_option("--model", se.model, "Checkpoint")->required()->check(CLI::ExistingFile);
    search_cmd->add_option("--index", se.index, "Index")->required()->check(CLI::ExistingFile);
    search_cmd->add_option("--queries", se.queries, "Query embeddings")->required()->check(CLI::ExistingFile);
    search_cmd->add_option("--k", se.k, "Results per query")->capture_default_str()->check(CLI::PositiveNumber);
    search_cmd->add_option("--mode", se.mode, "adc or hamming")->capture_default_str()->check(
        CLI::IsMember({"adc", "hamming"}));

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Precision@k and codeword quality");
    add_shared(eval_cmd, ev.shared);
    eval_cmd->add_option("--model", ev.model, "Checkpoint")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--index", ev.index, "Index")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--queries", ev.queries, "Query embeddings")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--query-labels", ev.query_labels, "Query labels")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--labels", ev.labels, "Corpus labels, indexed by doc id")->required()->check(
        CLI::ExistingFile);
    eval_cmd->add_option("--k", ev.k, "Precision depth")->capture_default_str()->check(CLI::PositiveNumber);
    eval_cmd->add_option("--mode", ev.mode, "adc or hamming")->capture_default_str()->check(
        CLI::IsMember({"adc", "hamming"}));
    auto* clustering = eval_cmd->add_flag("--clustering", ev.clustering, "Also report codeword quality");
    eval_cmd->add_option("--emb", ev.emb, "Corpus embeddings (for --clustering)")
        ->check(CLI::ExistingFile)
        ->needs(clustering);
    clustering->needs(eval_cmd->get_option("--emb"));
    eval_cmd->add_option("--report", ev.report, "Also write the report to this file");
    eval_cmd->add_flag("--timing", ev.timing, "Include search time in the report");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        const auto subs = app.get_subcommands();
        out << (subs.empty() ? app.help() : subs.front()->help());
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion&) {
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(sy, out);
        if (train_cmd->parsed()) return cmd_train(tr, out);
        if (index_cmd->parsed()) return cmd_index(ix, out);
        if (search_cmd->parsed()) return cmd_search(se, out);
        if (eval_cmd->parsed()) return cmd_eval(ev, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace micpq::cli
