#include <doctest.h>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sgpt/biencoder.hpp"
#include "sgpt/crossencoder.hpp"
#include "sgpt/evaluation.hpp"
#include "sgpt/model.hpp"
#include "sgpt/retrieval.hpp"

using namespace sgpt;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = SGPT_FIXTURES_DIR;

std::string cli_bin() {
    const char* bin = std::getenv("SGPT_CLI_BIN");
    REQUIRE_MESSAGE(bin != nullptr, "SGPT_CLI_BIN must point at the sgpt binary");
    return bin;
}

struct Workdir {
    fs::path dir;
    Workdir() {
        dir = fs::temp_directory_path() /
              ("sgpt_cli_test_" + std::to_string(::getpid()));
        fs::create_directories(dir);
    }
    ~Workdir() { fs::remove_all(dir); }
    std::string path(const std::string& name) const {
        return (dir / name).string();
    }
};

int run_cli(const std::string& args) {
    const std::string cmd = cli_bin() + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string run_cli_capture(const std::string& args, const std::string& out_file) {
    const std::string cmd = cli_bin() + " " + args + " > " + out_file + " 2>&1";
    std::system(cmd.c_str());
    std::ifstream is(out_file);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string corpus_file() { return kFixtures + "/beir-mini/corpus.jsonl"; }
std::string queries_file() { return kFixtures + "/beir-mini/queries.jsonl"; }
std::string qrels_file() { return kFixtures + "/beir-mini/qrels.tsv"; }

/// Rankings parsed from a run, ignoring the config comment.
std::vector<Ranking> run_of(const std::string& path) {
    return read_trec_run(path);
}

void make_checkpoint(const std::string& path) {
    ModelConfig c;
    c.n_layers = 2;
    c.d_model = 16;
    c.n_heads = 2;
    c.max_seq_len = 512;
    c.seed = 42;
    DecoderModel::init(c).save_checkpoint(path);
}

}  // namespace

TEST_CASE("index and search match the library path") {
    Workdir wd;
    REQUIRE(run_cli("index --corpus " + corpus_file() + " --out " +
                    wd.path("idx.bin")) == 0);

    // Rebuilds are byte-identical.
    REQUIRE(run_cli("index --corpus " + corpus_file() + " --out " +
                    wd.path("idx2.bin")) == 0);
    CHECK(read_file(wd.path("idx.bin")) == read_file(wd.path("idx2.bin")));

    REQUIRE(run_cli("search --index " + wd.path("idx.bin") + " --queries " +
                    queries_file() + " --k 3 --out " + wd.path("run.trec")) == 0);

    // Library equivalence.
    const BeirData data = load_beir(corpus_file(), queries_file(), qrels_file());
    const InvertedIndex index = InvertedIndex::build(data.corpus);
    const auto cli_run = run_of(wd.path("run.trec"));
    REQUIRE(cli_run.size() <= data.queries.size());
    std::size_t matched = 0;
    for (const Query& q : data.queries) {
        const Ranking expect = index.search(q.id, q.text, 3);
        if (expect.entries.empty()) continue;  // empty rankings produce no rows
        const Ranking* got = nullptr;
        for (const Ranking& r : cli_run) {
            if (r.query_id == q.id) got = &r;
        }
        REQUIRE(got != nullptr);
        REQUIRE(got->entries.size() == expect.entries.size());
        for (std::size_t i = 0; i < expect.entries.size(); ++i) {
            CHECK(got->entries[i].doc_id == expect.entries[i].doc_id);
            CHECK(got->entries[i].score ==
                  doctest::Approx(expect.entries[i].score).epsilon(1e-12));
        }
        ++matched;
    }
    CHECK(matched == cli_run.size());

    // The run embeds its configuration as a comment.
    std::ifstream is(wd.path("run.trec"));
    std::string first;
    std::getline(is, first);
    CHECK(first.rfind("# cfg:", 0) == 0);
}

TEST_CASE("index rejects duplicate ids with exit code 2") {
    Workdir wd;
    std::ofstream bad(wd.path("dup.jsonl"));
    bad << R"({"_id": "same", "text": "a"})" << "\n";
    bad << R"({"_id": "same", "text": "b"})" << "\n";
    bad.close();
    const std::string log = run_cli_capture(
        "index --corpus " + wd.path("dup.jsonl") + " --out " + wd.path("x.bin"),
        wd.path("log.txt"));
    CHECK(run_cli("index --corpus " + wd.path("dup.jsonl") + " --out " +
                  wd.path("x.bin")) == 2);
    CHECK(log.find("same") != std::string::npos);
}

TEST_CASE("unknown flags are rejected") {
    CHECK(run_cli("index --corpus x --out y --bogus") == 2);
    CHECK(run_cli("definitely-not-a-subcommand") == 2);
}

TEST_CASE("embed presets and bisearch equivalence") {
    Workdir wd;
    make_checkpoint(wd.path("model.ckpt"));

    // Asymmetric preset pins specb on and max_len 300.
    const std::string log = run_cli_capture(
        "embed --model " + wd.path("model.ckpt") + " --corpus " + corpus_file() +
            " --preset asymmetric --out " + wd.path("emb.bin"),
        wd.path("embed_log.txt"));
    CHECK(log.find("specb=1") != std::string::npos);
    CHECK(log.find("max_len=300") != std::string::npos);

    const EmbeddingIndex index = EmbeddingIndex::load(wd.path("emb.bin"));
    CHECK(index.settings().specb);
    CHECK(index.settings().max_len == 300);

    // Symmetric preset: markers off, 75 tokens.
    const std::string log2 = run_cli_capture(
        "embed --model " + wd.path("model.ckpt") + " --corpus " + corpus_file() +
            " --preset symmetric --out " + wd.path("emb_sym.bin"),
        wd.path("embed_log2.txt"));
    CHECK(log2.find("specb=0") != std::string::npos);
    CHECK(log2.find("max_len=75") != std::string::npos);

    REQUIRE(run_cli("bisearch --emb " + wd.path("emb.bin") + " --model " +
                    wd.path("model.ckpt") + " --queries " + queries_file() +
                    " --k 3 --out " + wd.path("bi.trec")) == 0);

    const DecoderModel model = DecoderModel::load_checkpoint(wd.path("model.ckpt"));
    const BeirData data = load_beir(corpus_file(), queries_file(), qrels_file());
    const auto cli_run = run_of(wd.path("bi.trec"));
    REQUIRE(cli_run.size() == data.queries.size());
    for (std::size_t i = 0; i < data.queries.size(); ++i) {
        const Ranking expect =
            bi_search(model, data.queries[i].id, data.queries[i].text, index, 3);
        const Ranking& got = cli_run[i];
        REQUIRE(got.entries.size() == expect.entries.size());
        for (std::size_t j = 0; j < expect.entries.size(); ++j) {
            CHECK(got.entries[j].doc_id == expect.entries[j].doc_id);
        }
    }

    // A self-corpus query (exact document text) ranks itself first.
    Workdir wd2;
    std::ofstream self_q(wd2.path("self.jsonl"));
    self_q << R"({"_id": "sq", "text": "dogs bark at strangers and chase cats"})"
           << "\n";
    self_q.close();
    REQUIRE(run_cli("embed --model " + wd.path("model.ckpt") + " --corpus " +
                    corpus_file() + " --preset symmetric --out " +
                    wd2.path("emb.bin")) == 0);
    REQUIRE(run_cli("bisearch --emb " + wd2.path("emb.bin") + " --model " +
                    wd.path("model.ckpt") + " --queries " + wd2.path("self.jsonl") +
                    " --k 1 --out " + wd2.path("self.trec")) == 0);
    const auto self_run = run_of(wd2.path("self.trec"));
    REQUIRE(self_run.size() == 1);
    CHECK(self_run[0].entries[0].doc_id == "doc2");
}

TEST_CASE("rerank with max_rerank zero is row identical to its input") {
    Workdir wd;
    make_checkpoint(wd.path("model.ckpt"));
    REQUIRE(run_cli("index --corpus " + corpus_file() + " --out " +
                    wd.path("idx.bin")) == 0);
    REQUIRE(run_cli("search --index " + wd.path("idx.bin") + " --queries " +
                    queries_file() + " --k 3 --out " + wd.path("run.trec") +
                    " --tag same") == 0);
    REQUIRE(run_cli("rerank --model " + wd.path("model.ckpt") + " --run " +
                    wd.path("run.trec") + " --corpus " + corpus_file() +
                    " --queries " + queries_file() +
                    " --max-rerank 0 --max-len 256 --out " + wd.path("rr.trec") +
                    " --tag same") == 0);

    // Rows (minus config comments) are identical.
    auto rows = [](const std::string& path) {
        std::ifstream is(path);
        std::vector<std::string> out;
        std::string line;
        while (std::getline(is, line)) {
            if (!line.empty() && line[0] != '#') out.push_back(line);
        }
        return out;
    };
    CHECK(rows(wd.path("run.trec")) == rows(wd.path("rr.trec")));
}

TEST_CASE("rerank output is a permutation and matches the library") {
    Workdir wd;
    make_checkpoint(wd.path("model.ckpt"));
    REQUIRE(run_cli("index --corpus " + corpus_file() + " --out " +
                    wd.path("idx.bin")) == 0);
    REQUIRE(run_cli("search --index " + wd.path("idx.bin") + " --queries " +
                    queries_file() + " --k 3 --out " + wd.path("run.trec")) == 0);
    REQUIRE(run_cli("rerank --model " + wd.path("model.ckpt") + " --run " +
                    wd.path("run.trec") + " --corpus " + corpus_file() +
                    " --queries " + queries_file() +
                    " --max-rerank 10 --max-len 256 --out " + wd.path("rr.trec")) ==
            0);

    const DecoderModel model = DecoderModel::load_checkpoint(wd.path("model.ckpt"));
    const BeirData data = load_beir(corpus_file(), queries_file(), qrels_file());
    const PromptRegistry registry = PromptRegistry::builtin();
    const PromptTemplate& prompt = registry.get("G");
    const auto first = run_of(wd.path("run.trec"));
    const auto reranked = run_of(wd.path("rr.trec"));
    REQUIRE(first.size() == reranked.size());
    for (std::size_t i = 0; i < first.size(); ++i) {
        std::string text;
        for (const Query& q : data.queries) {
            if (q.id == first[i].query_id) text = q.text;
        }
        const Ranking expect =
            rerank(model, prompt, text, first[i], data.corpus, 10, 256);
        REQUIRE(reranked[i].entries.size() == expect.entries.size());
        for (std::size_t j = 0; j < expect.entries.size(); ++j) {
            CHECK(reranked[i].entries[j].doc_id == expect.entries[j].doc_id);
        }
        // Permutation of the first stage.
        auto ids = [](const Ranking& r) {
            std::vector<std::string> v;
            for (const auto& e : r.entries) v.push_back(e.doc_id);
            std::sort(v.begin(), v.end());
            return v;
        };
        CHECK(ids(reranked[i]) == ids(first[i]));
    }
}

TEST_CASE("unknown prompt id lists the registry and exits 2") {
    Workdir wd;
    make_checkpoint(wd.path("model.ckpt"));
    REQUIRE(run_cli("index --corpus " + corpus_file() + " --out " +
                    wd.path("idx.bin")) == 0);
    REQUIRE(run_cli("search --index " + wd.path("idx.bin") + " --queries " +
                    queries_file() + " --k 3 --out " + wd.path("run.trec")) == 0);
    const std::string cmd = "rerank --model " + wd.path("model.ckpt") + " --run " +
                            wd.path("run.trec") + " --corpus " + corpus_file() +
                            " --queries " + queries_file() +
                            " --prompt NOPE --out " + wd.path("x.trec");
    CHECK(run_cli(cmd) == 2);
    const std::string log = run_cli_capture(cmd, wd.path("log.txt"));
    CHECK(log.find("quoraD") != std::string::npos);  // registry listing
}

TEST_CASE("train runs deterministically and honors bitfit") {
    Workdir wd;
    std::ofstream pairs(wd.path("pairs.tsv"));
    pairs << "what color is the sky\tthe sky is blue\n";
    pairs << "how do fish breathe\tfish use gills to breathe\n";
    pairs << "capital of spain\tmadrid is the capital of spain\n";
    pairs << "what do cows eat\tcows eat grass and hay\n";
    pairs.close();

    const std::string train_cmd =
        "train --pairs " + wd.path("pairs.tsv") +
        " --steps 2 --batch-size 2 --chunks 1 --lr 0.1 --bitfit --max-len 64"
        " --layers 1 --heads 2 --dmodel 16 --max-seq-len 64 --seed 7"
        " --gradlog " + wd.path("grads.csv");

    const std::string log1 =
        run_cli_capture(train_cmd + " --out " + wd.path("m1.ckpt"),
                        wd.path("log1.txt"));
    const std::string log2 =
        run_cli_capture(train_cmd + " --out " + wd.path("m2.ckpt"),
                        wd.path("log2.txt"));
    CHECK(log1.find("tau=20") != std::string::npos);  // default temperature
    CHECK(log1.find("first_loss=") != std::string::npos);

    // Bit-identical checkpoints across reruns with the same seed.
    CHECK(read_file(wd.path("m1.ckpt")) == read_file(wd.path("m2.ckpt")));

    // The freeze report: with one block, 6 + 1 bias tensors change and
    // everything else holds still.
    CHECK(log1.find("bitfit: only the 7 bias tensors may change") !=
          std::string::npos);
    CHECK(log1.find("tensors_changed=7") != std::string::npos);

    // Gradient log has a header plus rows for every step.
    std::ifstream grads(wd.path("grads.csv"));
    std::string line;
    std::getline(grads, line);
    CHECK(line.rfind("# cfg:", 0) == 0);
    std::getline(grads, line);
    CHECK(line == "step,tensor,norm");
    std::size_t rows = 0;
    while (std::getline(grads, line)) ++rows;
    const DecoderModel m = DecoderModel::load_checkpoint(wd.path("m1.ckpt"));
    CHECK(rows == 2 * m.parameters().size());

    // steps 0 needs no pairs file and just writes the initialized model.
    CHECK(run_cli("train --steps 0 --layers 1 --heads 2 --dmodel 16"
                  " --max-seq-len 64 --seed 7 --out " + wd.path("m0.ckpt")) == 0);
}

TEST_CASE("runtime failures exit with code 3") {
    Workdir wd;
    make_checkpoint(wd.path("model.ckpt"));
    REQUIRE(run_cli("index --corpus " + corpus_file() + " --out " +
                    wd.path("idx.bin")) == 0);
    REQUIRE(run_cli("search --index " + wd.path("idx.bin") + " --queries " +
                    queries_file() + " --k 3 --out " + wd.path("run.trec")) == 0);
    // A prompt budget beyond the model's sequence limit is a runtime
    // contract violation, not a usage error.
    CHECK(run_cli("rerank --model " + wd.path("model.ckpt") + " --run " +
                  wd.path("run.trec") + " --corpus " + corpus_file() +
                  " --queries " + queries_file() +
                  " --max-len 5000 --out " + wd.path("x.trec")) == 3);
}

TEST_CASE("the SGPT_SEED environment variable matches the --seed flag") {
    Workdir wd;
    REQUIRE(run_cli("train --steps 0 --layers 1 --heads 2 --dmodel 16"
                    " --max-seq-len 64 --seed 11 --out " + wd.path("a.ckpt")) == 0);
    const std::string env_cmd =
        "SGPT_SEED=11 " + cli_bin() +
        " train --steps 0 --layers 1 --heads 2 --dmodel 16 --max-seq-len 64"
        " --out " + wd.path("b.ckpt") + " > /dev/null 2>&1";
    REQUIRE(std::system(env_cmd.c_str()) == 0);
    CHECK(read_file(wd.path("a.ckpt")) == read_file(wd.path("b.ckpt")));
}

TEST_CASE("eval reports per-query values, means and bounds") {
    Workdir wd;
    std::vector<Ranking> run;
    Ranking r1;
    r1.query_id = "q1";
    r1.entries = {{"doc2", 3.0}, {"doc1", 2.0}, {"doc3", 1.0}};
    run.push_back(r1);
    write_trec_run(wd.path("run.trec"), run, "t", "cfg: test");

    const std::string out = run_cli_capture(
        "eval --run " + wd.path("run.trec") + " --qrels " + qrels_file() +
            " --metric ndcg@10 --bound-candidates " + wd.path("run.trec") +
            " --max-rerank 3",
        wd.path("eval.txt"));
    CHECK(out.find("query q1") != std::string::npos);
    CHECK(out.find("bound 1.0") != std::string::npos);  // all judged reachable
    CHECK(out.find("mean ") != std::string::npos);

    // Perfect ordering scores 1.0.
    std::vector<Ranking> perfect;
    Ranking p1;
    p1.query_id = "q1";
    p1.entries = {{"doc1", 3.0}, {"doc2", 2.0}};
    perfect.push_back(p1);
    write_trec_run(wd.path("perfect.trec"), perfect, "t", "");
    const std::string out2 = run_cli_capture(
        "eval --run " + wd.path("perfect.trec") + " --qrels " + qrels_file(),
        wd.path("eval2.txt"));
    CHECK(out2.find("query q1 1.000000") != std::string::npos);

    // Library equivalence for the mean.
    const Qrels qrels = load_beir(corpus_file(), queries_file(), qrels_file()).qrels;
    const EvalReport report = evaluate_run(run, qrels, parse_metric("ndcg@10"));
    std::ostringstream expect;
    expect.precision(6);
    expect << std::fixed << "mean " << report.mean;
    CHECK(out.find(expect.str()) != std::string::npos);
}
