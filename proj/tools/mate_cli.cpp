// mate: dataset generation, training, transfer, ablation sweeps and evaluation.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mate/metrics.hpp"
#include "mate/rng.hpp"
#include "mate/synth.hpp"
#include "mate/train.hpp"
#include "mate/transfer.hpp"

namespace fs = std::filesystem;
using namespace mate;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kDiverged = 3 };

struct UsageError : Error {
    using Error::Error;
};

// Splices `key=value` lines from --config into argv as `--key value`, after
// the subcommand, for every key not already given on the command line.
std::vector<std::string> merge_config(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    std::string config;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config = args[i + 1];
            args.erase(args.begin() + i, args.begin() + i + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            config = args[i].substr(9);
            args.erase(args.begin() + i);
            break;
        }
    }
    if (config.empty()) return args;
    std::ifstream in(config);
    if (!in) throw IoError("cannot open config file '" + config + "'");
    auto given = [&](const std::string& key) {
        for (const auto& a : args)
            if (a == "--" + key || a.rfind("--" + key + "=", 0) == 0) return true;
        return false;
    };
    std::vector<std::string> extra;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0)
            throw UsageError(config + ":" + std::to_string(lineno) + ": expected key=value");
        const std::string key = line.substr(0, eq);
        if (!given(key)) {
            extra.push_back("--" + key);
            extra.push_back(line.substr(eq + 1));
        }
    }
    args.insert(args.end(), extra.begin(), extra.end());
    return args;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

// Flags shared by transfer, transfer-multi and ablate.
struct TransferFlags {
    std::string input, material, mask, depth, ckpt, lora, out;
    transfer::TransferOptions opt;
    std::string init = "illumination";
    bool no_material = false;

    void add(CLI::App* app, bool single_object) {
        app->add_option("--input", input, "RGB input image (PPM)")->required();
        if (single_object) {
            app->add_option("--material", material, "material swatch (PPM)")->required();
            app->add_option("--mask", mask, "object mask (PGM)")->required();
        }
        app->add_option("--depth", depth, "depth map (PGM); used with --lora");
        app->add_option("--ckpt", ckpt, "base model checkpoint")->required();
        app->add_option("--lora", lora, "depth adapter checkpoint");
        app->add_option("--gamma", opt.gamma, "cross-bias strength")->capture_default_str();
        app->add_option("--lora-weight", opt.lora_weight, "adapter weight w")->capture_default_str();
        app->add_option("--cfg", opt.cfg_scale, "guidance scale")->capture_default_str();
        app->add_option("--steps", opt.steps, "Euler steps")->capture_default_str();
        app->add_option("--t-start", opt.t_start, "initial time")->capture_default_str();
        app->add_option("--seed", opt.seed, "noise seed")->capture_default_str();
        app->add_option("--init", init, "initialization")
            ->check(CLI::IsMember({"illumination", "raw-input", "pure-noise"}))
            ->capture_default_str();
        app->add_flag("--no-material", no_material, "drop the material stream from the sequence");
    }

    struct Loaded {
        dit::ModelParams<float> model;
        std::optional<dit::LoraParams<float>> lora;
        imaging::ImagePlane input, depth;
    };

    Loaded load() {
        opt.init = transfer::parse_init_mode(init);
        opt.material_stream = !no_material;
        Loaded l{dit::load_model(ckpt), std::nullopt, imaging::load_image(input), {}};
        if (!lora.empty()) l.lora = dit::load_lora(lora);
        if (!depth.empty()) l.depth = imaging::load_image(depth);
        return l;
    }
};

// --------------------------------------------------------------------------

int cmd_generate(const fs::path& out, std::size_t count, std::uint64_t seed) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create '" + out.string() + "': " + ec.message());
    const auto plan = synth::plan_dataset(count, seed);
    for (std::size_t i = 0; i < plan.size(); ++i) {
        const auto& rec = plan[i];
        const auto sample = synth::generate_scene(rec.spec, rec.seed);
        synth::validate_sample(sample, rec.spec);
        const auto name = synth::scene_dir_name(i);
        synth::write_scene(out / name, rec, sample);
        std::cout << name << " " << synth::to_string(rec.split) << " " << synth::to_string(rec.spec.shape) << " "
                  << synth::to_string(rec.spec.material) << "\n";
    }
    return kOk;
}

struct TrainFlags {
    std::string data, stage = "base", out, base, log;
    synth::TrainConfig cfg;
    dit::ModelConfig model;
};

int cmd_train(TrainFlags& f) {
    f.cfg.stage = synth::parse_stage(f.stage);
    if (f.cfg.stage == synth::Stage::depth_lora && f.base.empty())
        throw UsageError("train: --stage depth_lora requires --base CKPT");
    auto scenes = synth::load_dataset(f.data, synth::Split::train);
    if (scenes.empty() && f.cfg.steps > 0) throw FormatError("train: no training scenes in '" + f.data + "'");

    std::optional<dit::ModelParams<float>> base;
    if (!f.base.empty()) base = dit::load_model(f.base);
    const dit::ModelConfig& mc = base ? base->config : f.model;
    std::vector<synth::TrainExample> examples;
    for (const auto& s : scenes) examples.push_back(synth::make_example(s.sample, mc));

    const std::string log_path = f.log.empty() ? f.out + ".loss.csv" : f.log;
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw IoError("cannot write loss log '" + log_path + "'");
    log << "step,loss\n";
    std::vector<double> losses;
    auto on_loss = [&](int step, double loss) {
        losses.push_back(loss);
        char buf[64];
        std::snprintf(buf, sizeof buf, "%d,%.9g\n", step, loss);
        log << buf << std::flush;
    };

    if (f.cfg.stage == synth::Stage::base) {
        dit::save_model(synth::train_base(examples, mc, f.cfg, on_loss), f.out);
    } else {
        dit::save_lora(synth::train_depth_lora(*base, examples, f.cfg, on_loss), f.out);
    }
    if (!losses.empty()) {
        const auto [first, last] = synth::smoothed_endpoints(losses);
        std::cout << "trained " << losses.size() << " steps; smoothed loss " << fmt(first) << " -> " << fmt(last)
                  << "\n";
    } else {
        std::cout << "trained 0 steps; wrote initialization\n";
    }
    return kOk;
}

int cmd_transfer(TransferFlags& f) {
    auto l = f.load();
    transfer::TransferInputs in{l.input, imaging::load_image(f.material), imaging::load_mask(f.mask), l.depth};
    auto out = transfer::run_transfer(l.model, l.lora ? &*l.lora : nullptr, in, f.opt);
    imaging::save_image(out, f.out);
    return kOk;
}

int cmd_transfer_multi(TransferFlags& f, const std::string& masks_arg, const std::string& materials_arg) {
    const auto mask_files = split_list(masks_arg);
    const auto material_files = split_list(materials_arg);
    if (mask_files.empty() || mask_files.size() != material_files.size())
        throw UsageError("transfer-multi: --masks and --materials need the same nonzero number of entries");
    std::vector<imaging::Mask> masks;
    for (const auto& m : mask_files) masks.push_back(imaging::load_mask(m));
    for (std::size_t i = 0; i < masks.size(); ++i)
        for (std::size_t j = i + 1; j < masks.size(); ++j) {
            if (masks[i].width != masks[j].width || masks[i].height != masks[j].height)
                throw DimensionError("transfer-multi: mask sizes differ");
            std::size_t overlap = 0;
            for (std::size_t p = 0; p < masks[i].values.size(); ++p)
                overlap += masks[i].values[p] > 0.0f && masks[j].values[p] > 0.0f;
            if (overlap > 0)
                throw FormatError("transfer-multi: masks " + mask_files[i] + " and " + mask_files[j] + " overlap in " +
                                  std::to_string(overlap) + " pixels");
        }
    auto l = f.load();
    imaging::ImagePlane current = l.input;
    for (std::size_t k = 0; k < masks.size(); ++k) {
        auto opt = f.opt;
        opt.seed = k == 0 ? f.opt.seed : derive_seed(f.opt.seed, {k});
        transfer::TransferInputs in{current, imaging::load_image(material_files[k]), masks[k], l.depth};
        current = transfer::run_transfer(l.model, l.lora ? &*l.lora : nullptr, in, opt);
    }
    imaging::save_image(current, f.out);
    return kOk;
}

int cmd_ablate(TransferFlags& f, const std::string& sweep, const fs::path& out_dir, const std::string& truth_path) {
    auto l = f.load();
    transfer::TransferInputs in{l.input, imaging::load_image(f.material), imaging::load_mask(f.mask), l.depth};
    std::optional<imaging::ImagePlane> truth;
    if (!truth_path.empty()) truth = imaging::load_image(truth_path);

    const auto settings = transfer::ablation_sweep(sweep, f.opt);
    if (sweep == "lora" && !l.lora) throw UsageError("ablate: --sweep lora needs --lora");

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());
    std::ofstream csv(out_dir / (sweep + ".csv"), std::ios::trunc);
    csv << "sweep,value,image,material_ssim" << (truth ? ",truth_masked_ssim" : "") << "\n";
    const auto result = transfer::run_sweep(l.model, l.lora ? &*l.lora : nullptr, in, settings);
    for (std::size_t i = 0; i < settings.size(); ++i) {
        const auto& img = result.images[i];
        const std::string name = sweep + "_" + std::to_string(i) + ".ppm";
        imaging::save_image(img, out_dir / name);
        csv << sweep << "," << settings[i].label << "," << name << ","
            << fmt(metrics::masked_ssim(img, in.material, in.mask));
        if (truth) csv << "," << fmt(metrics::masked_ssim(img, *truth, in.mask));
        csv << "\n";
    }
    imaging::save_image(result.sheet, out_dir / (sweep + "_sheet.ppm"));
    std::cout << "wrote " << settings.size() << " settings to " << out_dir.string() << "\n";
    return kOk;
}

int cmd_eval(const fs::path& pred, const fs::path& truth, const std::string& mask_dir) {
    for (const auto& d : {pred, truth})
        if (!fs::is_directory(d)) throw IoError("'" + d.string() + "' is not a directory");
    auto images = [](const fs::path& dir) {
        std::vector<std::string> names;
        for (const auto& e : fs::directory_iterator(dir)) {
            const auto ext = e.path().extension().string();
            if (e.is_regular_file() && (ext == ".ppm" || ext == ".pgm")) names.push_back(e.path().filename().string());
        }
        std::sort(names.begin(), names.end());
        return names;
    };
    const auto pn = images(pred), tn = images(truth);
    if (pn != tn) throw FormatError("eval: prediction and truth directories do not hold the same file names");

    std::cout << "name,ssim,psnr,masked_mse\n";
    double s_ssim = 0, s_psnr = 0, s_mmse = 0;
    for (const auto& n : pn) {
        const auto a = imaging::load_image(pred / n), b = imaging::load_image(truth / n);
        double mm;
        if (!mask_dir.empty()) {
            const auto mpath = fs::path(mask_dir) / (fs::path(n).stem().string() + ".pgm");
            if (!fs::exists(mpath)) throw FormatError("eval: no mask for " + n);
            mm = metrics::masked_mse(a, b, imaging::load_mask(mpath));
        } else {
            mm = metrics::mse(a, b);
        }
        const double s = metrics::ssim(a, b), p = metrics::psnr(a, b);
        s_ssim += s;
        s_psnr += p;
        s_mmse += mm;
        std::cout << n << "," << fmt(s) << "," << fmt(p) << "," << fmt(mm) << "\n";
    }
    if (!pn.empty()) {
        const double k = double(pn.size());
        std::cout << "mean," << fmt(s_ssim / k) << "," << fmt(s_psnr / k) << "," << fmt(s_mmse / k) << "\n";
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mate: miniature material-transfer diffusion transformer"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("generate", "write a synthetic dataset");
    std::string gen_out;
    std::size_t gen_count = 0;
    std::uint64_t gen_seed = 0;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--count", gen_count, "number of scenes")->required();
    gen->add_option("--seed", gen_seed, "dataset seed")->capture_default_str();

    auto* tr = app.add_subcommand("train", "train the base model or the depth adapter");
    TrainFlags tf;
    tr->add_option("--data", tf.data, "dataset directory")->required();
    tr->add_option("--stage", tf.stage, "training stage")
        ->check(CLI::IsMember({"base", "depth_lora"}))
        ->capture_default_str();
    tr->add_option("--steps", tf.cfg.steps, "optimizer steps")->capture_default_str();
    tr->add_option("--seed", tf.cfg.seed, "training seed")->capture_default_str();
    tr->add_option("--out", tf.out, "output checkpoint")->required();
    tr->add_option("--base", tf.base, "base checkpoint (depth_lora stage)");
    tr->add_option("--log", tf.log, "loss CSV (default: <out>.loss.csv)");
    tr->add_option("--batch", tf.cfg.batch, "batch size")->capture_default_str();
    tr->add_option("--lr", tf.cfg.lr, "learning rate")->capture_default_str();
    tr->add_option("--embed-dim", tf.model.embed_dim, "model width (base stage)")->capture_default_str();
    tr->add_option("--heads", tf.model.heads, "attention heads (base stage)")->capture_default_str();
    tr->add_option("--blocks", tf.model.num_blocks, "transformer blocks (base stage)")->capture_default_str();
    tr->add_option("--lora-rank", tf.model.lora_rank, "adapter rank (base stage)")->capture_default_str();

    auto* tx = app.add_subcommand("transfer", "apply a material to one masked object");
    TransferFlags txf;
    txf.add(tx, true);
    tx->add_option("--out", txf.out, "output image (PPM)")->required();

    auto* tm = app.add_subcommand("transfer-multi", "apply materials to several disjoint masked objects");
    TransferFlags tmf;
    std::string tm_masks, tm_materials;
    tmf.add(tm, false);
    tm->add_option("--masks", tm_masks, "comma-separated mask PGMs")->required();
    tm->add_option("--materials", tm_materials, "comma-separated material PPMs")->required();
    tm->add_option("--out", tmf.out, "output image (PPM)")->required();

    auto* ab = app.add_subcommand("ablate", "run a parameter sweep and write a contact sheet");
    TransferFlags abf;
    std::string ab_sweep, ab_out, ab_truth;
    abf.add(ab, true);
    ab->add_option("--sweep", ab_sweep, "gamma | lora | cfg | init")
        ->required()
        ->check(CLI::IsMember({"gamma", "lora", "cfg", "init"}));
    ab->add_option("--out-dir", ab_out, "output directory")->required();
    ab->add_option("--truth", ab_truth, "ground-truth image for an extra metric column");

    auto* ev = app.add_subcommand("eval", "compare predicted and ground-truth images");
    std::string ev_pred, ev_truth, ev_mask;
    ev->add_option("--pred", ev_pred, "directory of predictions")->required();
    ev->add_option("--truth", ev_truth, "directory of ground truth")->required();
    ev->add_option("--mask", ev_mask, "directory of <name>.pgm masks");

    try {
        auto args = merge_config(argc, argv);
        std::vector<char*> cargs;
        for (auto& a : args) cargs.push_back(a.data());
        app.parse(static_cast<int>(cargs.size()), cargs.data());

        if (gen->parsed()) return cmd_generate(gen_out, gen_count, gen_seed);
        if (tr->parsed()) return cmd_train(tf);
        if (tx->parsed()) return cmd_transfer(txf);
        if (tm->parsed()) return cmd_transfer_multi(tmf, tm_masks, tm_materials);
        if (ab->parsed()) return cmd_ablate(abf, ab_sweep, ab_out, ab_truth);
        if (ev->parsed()) return cmd_eval(ev_pred, ev_truth, ev_mask);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    } catch (const UsageError& e) {
        std::cerr << "mate: " << e.what() << "\n";
        return kUsage;
    } catch (const RangeError& e) {
        std::cerr << "mate: " << e.what() << "\n";
        return kUsage;
    } catch (const DivergenceError& e) {
        std::cerr << "mate: " << e.what() << " (step " << e.step() << ")\n";
        return kDiverged;
    } catch (const NumericsError& e) {
        std::cerr << "mate: " << e.what() << "\n";
        return kDiverged;
    } catch (const Error& e) {
        std::cerr << "mate: " << e.what() << "\n";
        return kData;
    }
    return kUsage;
}
