#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "selftrain/text.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "selftrain_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        selftrain::text::write_file(d / "spec.txt",
                                    "synth.records = 24\nsynth.gold_fraction = 0.25\n"
                                    "class.SPSW.count = 96\nclass.PLED.count = 320\nclass.GPED.count = 320\n"
                                    "class.ARTF.count = 200\nclass.EYEM.count = 120\n");
        selftrain::text::write_file(d / "run.txt",
                                    "data.manifest = corpus/manifest.tsv\nhmm.states = 3\nhmm.mixtures = 2\n"
                                    "hmm.max_iters = 6\nloop.iterations = 1\n");
        return d;
    }();
    return dir;
}

int run(const std::string& args) {
    const std::string cmd = "cd '" + workdir().string() + "' && SELFTRAIN_LOG=off '" SELFTRAIN_CLI_PATH "' " + args +
                            " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() { ASSERT_EQ(run("synth --spec spec.txt --out corpus --seed 3"), 0); }
};

}  // namespace

TEST_F(Cli, SynthWritesCorpus) {
    EXPECT_TRUE(fs::exists(workdir() / "corpus/manifest.tsv"));
    EXPECT_TRUE(fs::exists(workdir() / "corpus/summary.tsv"));
    EXPECT_TRUE(fs::exists(workdir() / "corpus/signals/rec0000.csv"));
    EXPECT_EQ(run("synth --spec spec.txt --out corpus"), 2);
}

TEST_F(Cli, SelftrainRunDirectory) {
    ASSERT_EQ(run("selftrain --config run.txt --out run_a --seed 4"), 0);
    for (const char* f : {"config.txt", "report.csv", "final_labels.csv", "table1.txt", "status.txt",
                          "iter_0/models.txt", "iter_1/models.txt", "iter_1/selection_audit.csv"})
        EXPECT_TRUE(fs::exists(workdir() / "run_a" / f)) << f;
    ASSERT_EQ(run("selftrain --config run_a/config.txt --out run_b --force"), 0);
    for (const char* f : {"report.csv", "final_labels.csv", "iter_1/models.txt"})
        EXPECT_EQ(selftrain::text::read_file(workdir() / "run_a" / f), selftrain::text::read_file(workdir() / "run_b" / f))
            << f;
    EXPECT_EQ(run("report --run run_a"), 0);
    EXPECT_EQ(run("eval --config run.txt --models run_a/iter_1/models.txt --before run_a/iter_0/models.txt --out ev"), 0);
    EXPECT_TRUE(fs::exists(workdir() / "ev/confusion.csv"));
}

TEST_F(Cli, ExitCodes) {
    EXPECT_EQ(run("selftrain --config run.txt --out x --no-such-flag"), 2);
    EXPECT_EQ(run("frobnicate"), 2);
    selftrain::text::write_file(workdir() / "bad.txt", "data.manifest = corpus/manifest.tsv\nhmm.mixture = 2\n");
    EXPECT_EQ(run("selftrain --config bad.txt --out x"), 3);
    EXPECT_EQ(run("selftrain --config run.txt --out stall --scheme s2 --threshold 1"), 5);
    EXPECT_EQ(run("eval --config run.txt --models missing.txt --out e"), 3);
    EXPECT_FALSE(fs::exists(workdir() / "x"));
}

TEST_F(Cli, SweepAndDecode) {
    ASSERT_EQ(run("train --config run.txt --out tr"), 0);
    EXPECT_EQ(run("decode --config run.txt --models tr/models.txt --role unlabeled --out dec"), 0);
    EXPECT_TRUE(fs::exists(workdir() / "dec/decoded.csv"));
    ASSERT_EQ(run("sweep --config run.txt --models tr/models.txt --class PLED --percentiles 20,5 --out sw"), 0);
    const auto csv = selftrain::text::read_file(workdir() / "sw/sweep.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}
