#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "favae/checkpoint.hpp"
#include "favae/error.hpp"
#include "favae/fault.hpp"
#include "favae/harness.hpp"
#include "favae/images.hpp"

namespace fs = std::filesystem;
using namespace favae;

namespace {

struct Common {
    std::string config;
    std::string seed;
    std::string out;
    std::string checkpoint;
};

void add_common(CLI::App* app, Common& c, const std::string& default_out) {
    app->add_option("--config", c.config, "Config file (key = value with [section] headers)");
    app->add_option("--seed", c.seed, "Overrides run.seed");
    app->add_option("--out", c.out, "Output directory")->default_str(default_out);
    app->add_option("--checkpoint", c.checkpoint, "Checkpoint to read");
    c.out = default_out;
}

harness::RunConfig run_config(const Common& c) {
    auto config = c.config.empty() ? harness::Config::defaults() : harness::Config::load(c.config);
    if (!c.seed.empty()) config.set("run.seed", c.seed);
    return harness::RunConfig::from(config);
}

int cmd_train(const Common& c) {
    const auto run = run_config(c);
    const auto result = harness::train_favae(run, c.out, c.checkpoint);
    const auto& e = result.final_eval;
    std::printf("steps %zu  psnr %.3f  band error low %.4f mid %.4f high %.4f\n", result.steps.size(), e.psnr,
                e.band_error[0], e.band_error[1], e.band_error[2]);
    std::printf("checkpoint %s\n", result.checkpoint.string().c_str());
    return 0;
}

int cmd_train_cat(const Common& c) {
    if (c.checkpoint.empty()) throw UsageError("train-cat: --checkpoint (an FA-VAE checkpoint) is required");
    const auto run = run_config(c);
    const auto result = harness::train_cat(run, c.checkpoint, c.out);
    std::printf("final nll %.4f  js(class0, class1) %.4f\n", result.nll.empty() ? 0.0 : result.nll.back(), result.js);
    std::printf("checkpoint %s\n", result.checkpoint.string().c_str());
    return 0;
}

int cmd_gradcheck(const std::string& scope, const std::string& fault_site) {
    if (!fault_site.empty()) fault::inject(fault::parse(fault_site));
    const auto lines = harness::gradcheck_battery(scope);
    fault::clear();
    bool ok = true;
    for (const auto& l : lines) {
        std::printf("%-4s %-9s %-24s max_rel_err %.3e\n", l.pass ? "ok" : "FAIL", l.scope.c_str(), l.op.c_str(), l.max_rel_error);
        ok = ok && l.pass;
    }
    return ok ? 0 : 2;
}

int cmd_freqmap(const Common& c, const std::string& image) {
    if (image.empty()) throw UsageError("freqmap: --image is required");
    const auto img = images::read_pnm(image);
    std::vector<fs::path> files;
    if (c.checkpoint.empty()) {
        files = harness::write_freq_maps(img, nullptr, c.out);
    } else {
        const auto model = checkpoint::load(c.checkpoint).make_model();
        files = harness::write_freq_maps(img, &model, c.out);
    }
    for (const auto& f : files) std::printf("%s\n", f.string().c_str());
    return 0;
}

int cmd_reconstruct(const Common& c, const std::string& image) {
    if (c.checkpoint.empty()) throw UsageError("reconstruct: --checkpoint is required");
    const auto model = checkpoint::load(c.checkpoint).make_model();
    data::Dataset d;
    if (!image.empty()) {
        d = data::from_image(images::read_pnm(image));
    } else {
        d = harness::make_datasets(run_config(c)).second;
    }
    const auto r = harness::reconstruct(model, d, c.out);
    std::printf("psnr %.3f\n%s\n", r.psnr, r.grid.string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FA-VAE trainer and diagnostics"};
    app.require_subcommand(1);

    Common train, cat, grad, freq, recon;
    auto* t = app.add_subcommand("train", "Train the FA-VAE autoencoder");
    add_common(t, train, "runs/favae");
    auto* tc = app.add_subcommand("train-cat", "Train the conditional transformer on a frozen FA-VAE");
    add_common(tc, cat, "runs/cat");

    std::string scope = "all", fault_site;
    auto* g = app.add_subcommand("gradcheck", "Run the double-precision gradient battery");
    add_common(g, grad, ".");
    g->add_option("--scope", scope, "tensor, spectral, vq, favae, cat or all")->default_str("all");
    g->add_option("--inject-fault", fault_site, "Corrupt one backward rule: plane_transform, conv2d, softmax, pow, depthwise_conv2d or cross_entropy");

    std::string freq_image, recon_image;
    auto* f = app.add_subcommand("freqmap", "Write spectrum maps of an image and, with a checkpoint, its features");
    add_common(f, freq, "freqmaps");
    f->add_option("--image", freq_image, "PGM/PPM image");
    auto* r = app.add_subcommand("reconstruct", "Reconstruct an image or the configured held-out set");
    add_common(r, recon, "reconstruction");
    r->add_option("--image", recon_image, "PGM/PPM image (default: the held-out set of --config)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*t) return cmd_train(train);
        if (*tc) return cmd_train_cat(cat);
        if (*g) return cmd_gradcheck(scope, fault_site);
        if (*f) return cmd_freqmap(freq, freq_image);
        if (*r) return cmd_reconstruct(recon, recon_image);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const DimensionError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const ContractError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
