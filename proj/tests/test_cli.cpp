#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <algorithm>
#include <sstream>

#include "mate/imaging.hpp"
#include "mate/metrics.hpp"

namespace fs = std::filesystem;
using namespace mate;

namespace {

struct Run {
    int code;
    std::string out;
};

Run run(const std::string& args) {
    const std::string cmd = std::string(MATE_CLI_PATH) + " " + args + " 2>/dev/null";
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    std::string out;
    std::array<char, 4096> buf{};
    while (std::size_t n = std::fread(buf.data(), 1, buf.size(), p)) out.append(buf.data(), n);
    const int status = pclose(p);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// One small dataset and a tiny trained model shared by every case.
struct Fixture {
    fs::path root = fs::temp_directory_path() / "mate_cli_test";
    fs::path data = root / "data";
    fs::path scene = data / "scene_00004";  // held out
    fs::path base = root / "base.ckpt";
    fs::path lora = root / "lora.ckpt";

    Fixture() {
        fs::remove_all(root);
        fs::create_directories(root);
        REQUIRE(run("generate --out " + data.string() + " --count 5 --seed 3").code == 0);
        const std::string tiny = " --embed-dim 16 --heads 2 --blocks 1 --lora-rank 2 --batch 2 --steps 2";
        REQUIRE(run("train --data " + data.string() + " --stage base --out " + base.string() + tiny).code == 0);
        REQUIRE(run("train --data " + data.string() + " --stage depth_lora --base " + base.string() + " --out " +
                    lora.string() + " --batch 2 --steps 2")
                    .code == 0);
    }

    std::string transfer_args(const std::string& extra = "") const {
        return "--input " + (scene / "illum.ppm").string() + " --material " + (scene / "material.ppm").string() +
               " --mask " + (scene / "mask.pgm").string() + " --depth " + (scene / "depth.pgm").string() +
               " --ckpt " + base.string() + " --lora " + lora.string() + " --steps 2 " + extra;
    }
};

const Fixture& fixture() {
    static Fixture f;
    return f;
}

}  // namespace

TEST_CASE("generate") {
    const auto& f = fixture();
    auto empty = run("generate --out " + (f.root / "empty").string() + " --count 0");
    CHECK(empty.code == 0);
    CHECK(empty.out.empty());

    auto a = run("generate --out " + (f.root / "g1").string() + " --count 3 --seed 9");
    auto b = run("generate --out " + (f.root / "g2").string() + " --count 3 --seed 9");
    CHECK(a.code == 0);
    CHECK(a.out == b.out);
    CHECK(std::count(a.out.begin(), a.out.end(), '\n') == 3);
    for (const char* file : {"illum.ppm", "material.ppm", "depth.pgm", "mask.pgm", "target.ppm", "spec.txt"})
        CHECK(slurp(f.root / "g1" / "scene_00002" / file) == slurp(f.root / "g2" / "scene_00002" / file));
    CHECK(run("generate --count 3").code == 1);
}

TEST_CASE("train") {
    const auto& f = fixture();
    CHECK(fs::exists(f.base.string() + ".loss.csv"));
    CHECK(slurp(f.base.string() + ".loss.csv").rfind("step,loss\n1,", 0) == 0);
    CHECK(run("train --data " + f.data.string() + " --stage depth_lora --out " + (f.root / "x.ckpt").string()).code ==
          1);
    CHECK(run("train --data " + f.data.string() + " --stage depth_lora --base " + (f.root / "missing").string() +
              " --out " + (f.root / "x.ckpt").string())
              .code == 2);
    CHECK(run("train --data " + f.data.string() + " --stage nope --out x").code == 1);

    const auto z = (f.root / "zero.ckpt").string();
    CHECK(run("train --data " + f.data.string() + " --steps 0 --out " + z).code == 0);
    CHECK(run("train --data " + f.data.string() + " --steps 0 --out " + z + "2").code == 0);
    CHECK(slurp(z) == slurp(z + "2"));
}

TEST_CASE("transfer determinism, degenerate mask and errors") {
    const auto& f = fixture();
    const auto o1 = f.root / "t1.ppm", o2 = f.root / "t2.ppm";
    REQUIRE(run("transfer " + f.transfer_args("--seed 4 --out " + o1.string())).code == 0);
    REQUIRE(run("transfer " + f.transfer_args("--seed 4 --out " + o2.string())).code == 0);
    CHECK(slurp(o1) == slurp(o2));

    // all-zero mask returns the input bitwise
    imaging::save_image(imaging::ImagePlane(32, 32, 1, 0), f.root / "zero_mask.pgm");
    const auto oz = f.root / "tz.ppm";
    std::string args = "--input " + (f.scene / "illum.ppm").string() + " --material " +
                       (f.scene / "material.ppm").string() + " --mask " + (f.root / "zero_mask.pgm").string() +
                       " --ckpt " + f.base.string() + " --steps 2 --out " + oz.string();
    REQUIRE(run("transfer " + args).code == 0);
    CHECK(imaging::load_image(oz) == imaging::load_image(f.scene / "illum.ppm"));

    CHECK(run("transfer " + f.transfer_args("--gamma 1e-7 --out " + (f.root / "bad.ppm").string())).code == 1);
    std::string missing = "--input " + (f.scene / "illum.ppm").string() + " --material " +
                          (f.scene / "material.ppm").string() + " --mask " + (f.scene / "mask.pgm").string() +
                          " --ckpt " + (f.root / "nothing").string() + " --out x.ppm";
    CHECK(run("transfer " + missing).code == 2);
    imaging::save_image(imaging::ImagePlane(16, 16, 3), f.root / "small.ppm");
    args = "--input " + (f.root / "small.ppm").string() + " --material " + (f.scene / "material.ppm").string() +
           " --mask " + (f.scene / "mask.pgm").string() + " --ckpt " + f.base.string() + " --out x.ppm";
    CHECK(run("transfer " + args).code == 2);
}

TEST_CASE("gamma_min matches the run without material tokens") {
    const auto& f = fixture();
    const auto a = f.root / "gmin.ppm", b = f.root / "nomat.ppm";
    REQUIRE(run("transfer " + f.transfer_args("--gamma 1e-6 --out " + a.string())).code == 0);
    REQUIRE(run("transfer " + f.transfer_args("--no-material --out " + b.string())).code == 0);
    const auto ia = imaging::load_image(a), ib = imaging::load_image(b);
    double diff = 0;
    for (std::size_t i = 0; i < ia.samples.size(); ++i) diff += std::abs(int(ia.samples[i]) - int(ib.samples[i]));
    CHECK(diff / double(ia.samples.size()) <= 1.0);
}

TEST_CASE("config file merging, flags win") {
    const auto& f = fixture();
    const auto cfg = f.root / "run.cfg";
    std::ofstream(cfg) << "# transfer settings\ngamma=1e-7\nseed=4\n";
    CHECK(run("transfer --config " + cfg.string() + " " + f.transfer_args("--out " + (f.root / "c.ppm").string()))
              .code == 1);
    const auto c2 = f.root / "c2.ppm";
    REQUIRE(run("transfer --config " + cfg.string() + " " + f.transfer_args("--gamma 1.8 --out " + c2.string())).code ==
            0);
    CHECK(slurp(c2) == slurp(f.root / "t1.ppm"));
    std::ofstream(f.root / "broken.cfg") << "novalue\n";
    CHECK(run("transfer --config " + (f.root / "broken.cfg").string() + " " + f.transfer_args("--out y.ppm")).code ==
          1);
}

TEST_CASE("ablate sweeps") {
    const auto& f = fixture();
    const std::map<std::string, int> expected = {{"gamma", 5}, {"lora", 4}, {"cfg", 5}, {"init", 3}};
    for (const auto& [sweep, n] : expected) {
        CAPTURE(sweep);
        const auto dir = f.root / ("ab_" + sweep);
        REQUIRE(run("ablate --sweep " + sweep + " --out-dir " + dir.string() + " " + f.transfer_args()).code == 0);
        const auto csv = slurp(dir / (sweep + ".csv"));
        CHECK(std::count(csv.begin(), csv.end(), '\n') == n + 1);
        for (int i = 0; i < n; ++i) CHECK(fs::exists(dir / (sweep + "_" + std::to_string(i) + ".ppm")));
        const auto sheet = imaging::load_image(dir / (sweep + "_sheet.ppm"));
        CHECK(sheet.width == n * 32 + (n - 1));
    }
    const auto lora_csv = slurp(f.root / "ab_lora" / "lora.csv");
    CHECK(lora_csv.find("lora,0.700000,") != std::string::npos);
    CHECK(lora_csv.find("lora,1.000000,") != std::string::npos);
    CHECK(slurp(f.root / "ab_cfg" / "cfg.csv").find("cfg,50.000000,") != std::string::npos);

    const auto again = f.root / "ab_cfg2";
    REQUIRE(run("ablate --sweep cfg --out-dir " + again.string() + " " + f.transfer_args()).code == 0);
    CHECK(slurp(again / "cfg_sheet.ppm") == slurp(f.root / "ab_cfg" / "cfg_sheet.ppm"));
    CHECK(run("ablate --sweep bogus --out-dir " + again.string() + " " + f.transfer_args()).code == 1);
}

TEST_CASE("eval") {
    const auto& f = fixture();
    const auto p = f.root / "ev_pred", t = f.root / "ev_truth", e1 = f.root / "ev_e1", e2 = f.root / "ev_e2";
    for (const auto& d : {p, t, e1, e2}) fs::create_directories(d);
    auto empty = run("eval --pred " + e1.string() + " --truth " + e2.string());
    CHECK(empty.code == 0);
    CHECK(empty.out == "name,ssim,psnr,masked_mse\n");

    fs::copy_file(f.scene / "target.ppm", p / "a.ppm", fs::copy_options::overwrite_existing);
    fs::copy_file(f.scene / "target.ppm", t / "a.ppm", fs::copy_options::overwrite_existing);
    auto same = run("eval --pred " + p.string() + " --truth " + t.string());
    CHECK(same.code == 0);
    CHECK(same.out.find("mean,1.000000,inf,0.000000") != std::string::npos);

    imaging::save_image(imaging::ImagePlane(8, 8, 3, 0), p / "b.ppm");
    imaging::save_image(imaging::ImagePlane(8, 8, 3, 255), t / "b.ppm");
    auto pair = run("eval --pred " + p.string() + " --truth " + t.string());
    const double expected = metrics::ssim(imaging::ImagePlane(8, 8, 3, 0), imaging::ImagePlane(8, 8, 3, 255));
    char line[80];
    std::snprintf(line, sizeof line, "b.ppm,%.6f,0.000000,65025.000000", expected);
    CHECK(pair.out.find(line) != std::string::npos);

    imaging::save_image(imaging::ImagePlane(8, 8, 3, 0), p / "c.ppm");
    CHECK(run("eval --pred " + p.string() + " --truth " + t.string()).code == 2);
}

TEST_CASE("transfer-multi") {
    const auto& f = fixture();
    const auto single = f.root / "multi1.ppm";
    std::string common = "--input " + (f.scene / "illum.ppm").string() + " --depth " + (f.scene / "depth.pgm").string() +
                         " --ckpt " + f.base.string() + " --lora " + f.lora.string() + " --steps 2 --seed 4 ";
    REQUIRE(run("transfer-multi " + common + "--masks " + (f.scene / "mask.pgm").string() + " --materials " +
                (f.scene / "material.ppm").string() + " --out " + single.string())
                .code == 0);
    CHECK(slurp(single) == slurp(f.root / "t1.ppm"));

    // Two disjoint rectangles.
    imaging::ImagePlane left(32, 32, 1, 0), right(32, 32, 1, 0);
    for (int y = 8; y < 24; ++y)
        for (int x = 2; x < 14; ++x) {
            left.at(x, y) = 255;
            right.at(x + 16, y) = 255;
        }
    imaging::save_image(left, f.root / "left.pgm");
    imaging::save_image(right, f.root / "right.pgm");
    const auto mat2 = (f.data / "scene_00000" / "material.ppm").string();
    const auto lr = f.root / "lr.ppm", rl = f.root / "rl.ppm";
    REQUIRE(run("transfer-multi " + common + "--masks " + (f.root / "left.pgm").string() + "," +
                (f.root / "right.pgm").string() + " --materials " + (f.scene / "material.ppm").string() + "," + mat2 +
                " --out " + lr.string())
                .code == 0);
    REQUIRE(run("transfer-multi " + common + "--masks " + (f.root / "right.pgm").string() + "," +
                (f.root / "left.pgm").string() + " --materials " + mat2 + "," + (f.scene / "material.ppm").string() +
                " --out " + rl.string())
                .code == 0);
    const auto input = imaging::load_image(f.scene / "illum.ppm");
    const auto a = imaging::load_image(lr), b = imaging::load_image(rl);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const bool in_union = left.at(x, y) || right.at(x, y);
            if (in_union) continue;
            for (int c = 0; c < 3; ++c) {
                CHECK(a.at(x, y, c) == input.at(x, y, c));
                CHECK(b.at(x, y, c) == input.at(x, y, c));
            }
        }

    CHECK(run("transfer-multi " + common + "--masks " + (f.root / "left.pgm").string() + "," +
              (f.root / "left.pgm").string() + " --materials " + mat2 + "," + mat2 + " --out x.ppm")
              .code == 2);
    CHECK(run("transfer-multi " + common + "--masks " + (f.root / "left.pgm").string() + " --materials " + mat2 + "," +
              mat2 + " --out x.ppm")
              .code == 1);
}
