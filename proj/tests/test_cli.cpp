#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        root_ = fs::temp_directory_path() / ("ectlab_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(root_);
        fs::create_directories(root_);
    }
    void TearDown() override { fs::remove_all(root_); }

    Result run(const std::string& args) {
        const fs::path out = root_ / "stdout.txt", err = root_ / "stderr.txt";
        const std::string cmd = std::string(ECTLAB_CLI) + " " + args + " > " + out.string() + " 2> " + err.string();
        const int status = std::system(cmd.c_str());
        Result r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = slurp(out);
        r.err = slurp(err);
        return r;
    }

    // Tiny MelLike run writing under the test directory.
    fs::path write_config(const std::string& name, const std::string& extra = "", const std::string& trainer_extra = "") {
        const fs::path p = root_ / (name + ".json");
        std::ofstream(p) << R"({"name": ")" << name << R"(", "seed": 3, "output_dir": ")" << (root_ / name).string()
                         << R"(",
  "data": {"mel_bins": 8, "n_min": 8, "n_max": 10, "batch_size": 2},
  "arch": {"depth": 2, "base_width": 4, "width_mult": [1, 2], "time_features": 4, "embed_dim": 8},
  "trainer": {"pretrain_steps": 4, "tune_steps": 4, "log_every": 1)" << trainer_extra << R"(},
  "eval": {"n_samples": 3, "consistency_trajectories": 2, "consistency_steps": 3})"
                         << extra << "}\n";
        return p;
    }

    fs::path root_;
};

}  // namespace

TEST_F(Cli, FullPipeline) {
    const auto cfg = write_config("run");
    ASSERT_EQ(run("pretrain --config " + cfg.string()).code, 0);
    const fs::path dir = root_ / "run";
    EXPECT_TRUE(fs::exists(dir / "pretrain.ckpt"));
    EXPECT_TRUE(fs::exists(dir / "run_config.json"));
    EXPECT_TRUE(fs::exists(dir / "fingerprint.txt"));
    const std::string log = slurp(dir / "train_pretrain.csv");
    EXPECT_EQ(log.substr(0, log.find('\n')), "step,phase,loss,t_mean,r_mean,grad_norm,wall_ms");

    ASSERT_EQ(run("tune --config " + cfg.string() + " --from " + (dir / "pretrain.ckpt").string()).code, 0);
    EXPECT_TRUE(fs::exists(dir / "tune.ckpt"));

    const auto s = run("sample --ckpt " + (dir / "tune.ckpt").string() + " --config " + cfg.string() +
                       " --method heun --steps 2 --count 3 --out " + (root_ / "samples").string());
    ASSERT_EQ(s.code, 0) << s.err;
    for (const char* f : {"sample_00000.pgm", "sample_00002.f32", "sample_00001.range.txt", "metadata.json"}) {
        EXPECT_TRUE(fs::exists(root_ / "samples" / f)) << f;
    }
    EXPECT_NE(slurp(root_ / "samples" / "metadata.json").find("\"nfe\": 3"), std::string::npos);

    const auto e = run("eval --ckpt " + (dir / "tune.ckpt").string() + " --config " + cfg.string() +
                       " --method onestep");
    ASSERT_EQ(e.code, 0) << e.err;
    const std::string csv = slurp(dir / "eval.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "config_fingerprint,checkpoint_phase,checkpoint_step,mode,method,n_steps,nfe,used_ema,n_samples,"
              "masked_mse,sharpness_mean,sharpness_median,w2,w2_regularized,consistency_dev,wall_ms_per_sample");
    EXPECT_TRUE(fs::exists(dir / "eval_tune_onestep1.json"));
    // Appending a second row keeps a single header.
    ASSERT_EQ(run("eval --ckpt " + (dir / "tune.ckpt").string() + " --config " + cfg.string()).code, 0);
    const std::string csv2 = slurp(dir / "eval.csv");
    EXPECT_EQ(std::count(csv2.begin(), csv2.end(), '\n'), 3);
}

TEST_F(Cli, PretrainResumeIsByteIdentical) {
    const auto cfg = write_config("r", "", R"(, "checkpoint_every": 2)");
    ASSERT_EQ(run("pretrain --config " + cfg.string()).code, 0);
    const fs::path dir = root_ / "r";
    ASSERT_TRUE(fs::exists(dir / "pretrain_2.ckpt"));
    fs::copy_file(dir / "pretrain.ckpt", root_ / "straight.ckpt");
    ASSERT_EQ(run("pretrain --config " + cfg.string() + " --resume " + (dir / "pretrain_2.ckpt").string()).code, 0);
    EXPECT_EQ(slurp(dir / "pretrain.ckpt"), slurp(root_ / "straight.ckpt"));
}

TEST_F(Cli, GradcheckPassesAndSabotageFails) {
    const auto cfg = write_config("g");
    const auto ok = run("gradcheck --config " + cfg.string());
    EXPECT_EQ(ok.code, 0) << ok.out << ok.err;
    EXPECT_NE(ok.out.find("gate0.b5x5.w"), std::string::npos);
    EXPECT_NE(ok.out.find("stop-gradient"), std::string::npos);
    EXPECT_EQ(run("gradcheck --config " + cfg.string() + " --sabotage 1.001").code, 1);
}

TEST_F(Cli, InvalidConfigExitsTwoWithFieldPath) {
    const fs::path p = root_ / "bad.json";
    std::ofstream(p) << R"({"data": {"n_min": 6}})";
    const auto r = run("pretrain --config " + p.string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("data.n_min"), std::string::npos) << r.err;
    EXPECT_EQ(run("pretrain").code, 2);
    EXPECT_EQ(run("no-such-command").code, 2);
}

TEST_F(Cli, IoFailuresExitThree) {
    const auto cfg = write_config("io");
    EXPECT_EQ(run("eval --ckpt " + (root_ / "missing.ckpt").string() + " --config " + cfg.string()).code, 3);
    EXPECT_EQ(run("pretrain --config " + (root_ / "missing.json").string()).code, 3);
}

TEST_F(Cli, TuneRefusedWhenTuningDisabledOrMaskMismatch) {
    const auto cfg = write_config("t");
    ASSERT_EQ(run("pretrain --config " + cfg.string()).code, 0);
    const fs::path ckpt = root_ / "t" / "pretrain.ckpt";
    const auto off = write_config("t_off", R"(, "ablation": {"consistency_tuning": false})");
    const auto r = run("tune --config " + off.string() + " --from " + ckpt.string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("tuning is disabled"), std::string::npos);
    const auto nomask = write_config("t_nm", R"(, "ablation": {"masked_norm": false})");
    EXPECT_EQ(run("tune --config " + nomask.string() + " --from " + ckpt.string()).code, 2);
    EXPECT_EQ(run("tune --config " + nomask.string() + " --from " + ckpt.string() + " --force").code, 0);
    EXPECT_EQ(run("tune --config " + cfg.string()).code, 2);
}

TEST_F(Cli, GenDataIsReproducible) {
    const auto cfg = write_config("d");
    ASSERT_EQ(run("gen-data --config " + cfg.string() + " --out " + (root_ / "d1").string() + " --batches 2").code, 0);
    ASSERT_EQ(run("gen-data --config " + cfg.string() + " --out " + (root_ / "d2").string() + " --batches 2").code, 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(root_ / "d1")) {
        EXPECT_EQ(slurp(e.path()), slurp(root_ / "d2" / e.path().filename())) << e.path();
        ++files;
    }
    EXPECT_EQ(files, 1u + 2u * 2u * 2u);
    const auto p = run("pretrain --config " + cfg.string() + " --dataset " + (root_ / "d1").string());
    EXPECT_EQ(p.code, 0) << p.err;
}
