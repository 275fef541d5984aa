#include <gtest/gtest.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "favae/checkpoint.hpp"
#include "favae/datasets.hpp"
#include "favae/error.hpp"
#include "favae/harness.hpp"
#include "favae/images.hpp"
#include "favae/spectral.hpp"

using namespace favae;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("favae_harness_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

harness::Config tiny_config() {
    auto c = harness::Config::parse(
        "[run]\nsteps = 6\nbatch = 4\nlog_every = 2\nimage_every = 3\neval_count = 4\n"
        "[data]\nn = 8\nsize = 8\n"
        "[model]\nchannels = 4,8\nn_z = 4\ncodebook_size = 16\n"
        "[cat]\nlayers = 1\nheads = 2\nwidth = 16\nff = 32\ncond_width = 8\nsteps = 4\nbatch = 4\nlog_every = 2\n"
        "samples_per_class = 4\n");
    return c;
}

}  // namespace

TEST(Datasets, SameSeedIsIdenticalAndSeedsDiffer) {
    for (auto kind : {data::Kind::checker_mix, data::Kind::gaussian_textures}) {
        const auto a = data::make_dataset(kind, 6, 16, 7);
        const auto b = data::make_dataset(kind, 6, 16, 7);
        const auto c = data::make_dataset(kind, 6, 16, 8);
        EXPECT_EQ(a.pixels, b.pixels);
        EXPECT_EQ(a.labels, b.labels);
        EXPECT_NE(a.pixels, c.pixels);
        for (float v : a.pixels) {
            ASSERT_GE(v, -1.0f);
            ASSERT_LE(v, 1.0f);
        }
    }
}

TEST(Datasets, CheckerMixIsHighBandHeavy) {
    const auto d = data::checker_mix(32, 32, 1234);
    for (int i = 0; i < d.count; ++i) {
        const auto x = Tensor<double>::from({3, 32, 32}, std::vector<double>(d.image(i).begin(), d.image(i).end()));
        EXPECT_GT(spectral::band_fraction(x)[2], 0.3) << "image " << i;
    }
}

TEST(Datasets, GaussianTexturesPutEnergyInTheirLabelBand) {
    const auto d = data::gaussian_textures(12, 32, 5);
    for (int i = 0; i < d.count; ++i) {
        const auto x = Tensor<double>::from({3, 32, 32}, std::vector<double>(d.image(i).begin(), d.image(i).end()));
        const auto f = spectral::band_fraction(x);
        const int label = d.labels[i];
        for (int b = 0; b < 3; ++b) {
            if (b != label) EXPECT_GT(f[label], f[b]) << "image " << i;
        }
    }
}

TEST(Datasets, BatchIndicesAreDeterministicAndInRange) {
    const auto a = data::batch_indices(10, 4, 3, 17);
    EXPECT_EQ(a, data::batch_indices(10, 4, 3, 17));
    EXPECT_EQ(a.size(), 4u);
    for (int i : a) {
        EXPECT_GE(i, 0);
        EXPECT_LT(i, 10);
    }
}

TEST(Pnm, WriteOfReadReproducesTheFileExactly) {
    for (int channels : {1, 3}) {
        images::Image img{5, 3, channels, {}};
        for (int i = 0; i < 5 * 3 * channels; ++i) img.pixels.push_back(static_cast<std::uint8_t>(i * 37 % 256));
        const auto bytes = images::encode_pnm(img);
        EXPECT_EQ(images::encode_pnm(images::parse_pnm(bytes)), bytes);
        const auto dir = temp_dir("pnm");
        const auto file = dir / "a.pnm";
        images::write_pnm(file, img);
        EXPECT_EQ(slurp(file), bytes);
        EXPECT_EQ(images::read_pnm(file).pixels, img.pixels);
    }
}

TEST(Pnm, CommentsAreSkippedAndBadInputIsAnIoError) {
    std::string body(6, '\x7f');
    const auto img = images::parse_pnm("P5\n# made by hand\n3 2\n# max\n255\n" + body);
    EXPECT_EQ(img.width, 3);
    EXPECT_EQ(img.height, 2);
    EXPECT_EQ(img.pixels, std::vector<std::uint8_t>(6, 0x7f));
    EXPECT_THROW(images::parse_pnm("P5\n3 2\n255\n" + body.substr(0, 4)), IoError);
    EXPECT_THROW(images::parse_pnm("P2\n3 2\n255\n" + body), IoError);
    EXPECT_THROW(images::parse_pnm("P5\n3 2\n65535\n" + body), IoError);
    EXPECT_THROW(images::read_pnm("/nonexistent/file.pgm"), IoError);
}

TEST(Config, TextRoundTripsAndOverridesApply) {
    auto c = harness::Config::defaults();
    EXPECT_EQ(harness::Config::parse(c.text()).text(), c.text());
    auto t = tiny_config();
    EXPECT_EQ(t.get_int("run.steps"), 6);
    EXPECT_EQ(t.get_ints("model.channels"), (std::vector<int>{4, 8}));
    EXPECT_EQ(harness::Config::parse(t.text()).text(), t.text());
    t.set("run.seed", "42");
    EXPECT_EQ(t.get_u64("run.seed"), 42u);
}

TEST(Config, MalformedInputIsAUsageError) {
    EXPECT_THROW(harness::Config::parse("[run]\nstep = 3\n"), UsageError);
    EXPECT_THROW(harness::Config::parse("steps = 3\n"), UsageError);
    EXPECT_THROW(harness::Config::parse("[run]\nsteps 3\n"), UsageError);
    EXPECT_THROW(harness::Config::parse("[nowhere]\nsteps = 3\n"), UsageError);
    auto c = harness::Config::parse("[run]\nsteps = three\n");
    EXPECT_THROW(c.get_int("run.steps"), UsageError);
    EXPECT_THROW(harness::RunConfig::from(harness::Config::parse("[model]\nchannels = 4,8\nfcm = conv,conv,conv\n")),
                 UsageError);
    EXPECT_THROW(harness::RunConfig::from(harness::Config::parse("[data]\nsize = 30\n[model]\nchannels = 4,8,8\n")),
                 UsageError);
    EXPECT_THROW(harness::Config::load("/nonexistent/favae.cfg"), IoError);
}

TEST(Config, SingleValuesBroadcastToEveryLevel) {
    auto run = harness::RunConfig::from(
        harness::Config::parse("[model]\nchannels = 4,8,8\nfcm = conv_attention\nkernel_size = 5\n"));
    EXPECT_EQ(run.model.fcm.size(), 3u);
    EXPECT_EQ(run.model.fcm[2], model::FcmVariant::conv_attention);
    EXPECT_EQ(run.model.kernel_sizes, (std::vector<int>{5, 5, 5}));
    EXPECT_EQ(run.model.image_size, run.size);
}

TEST(Metrics, PsnrOnQuantizedImages) {
    std::vector<float> a{-1.0f, 0.0f, 1.0f, 0.5f};
    EXPECT_TRUE(std::isinf(harness::psnr_u8(a, a)));
    auto b = a;
    b[0] = -1.0f + 2.0f / 255.0f;  // one 8-bit level off in one of four pixels
    EXPECT_NEAR(harness::psnr_u8(a, b), 10.0 * std::log10(255.0 * 255.0 / 0.25), 1e-9);
}

TEST(Training, IdenticalConfigsWriteIdenticalOutputs) {
    const auto run = harness::RunConfig::from(tiny_config());
    const auto a = temp_dir("train_a"), b = temp_dir("train_b");
    const auto ra = harness::train_favae(run, a);
    harness::train_favae(run, b);
    EXPECT_EQ(ra.steps.size(), 6u);
    for (const char* f : {"metrics.csv", "checkpoint.bin", "config.txt", "step_000003/reconstruction.ppm",
                          "step_000006/spectrum_input.pgm", "step_000006/spectrum_reconstruction.pgm"}) {
        ASSERT_TRUE(fs::exists(a / f)) << f;
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    }
    const auto csv = slurp(a / "metrics.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,l1,ffl,dsl_0,dsl_1,lq,perplexity,sigma_0,sigma_1,psnr,band_low,band_mid,band_high");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
    EXPECT_EQ(harness::Config::parse(slurp(a / "config.txt")).text(), run.text);
}

TEST(Training, ResumedRunMatchesAnUninterruptedOne) {
    auto config = tiny_config();
    const auto full = temp_dir("full"), first = temp_dir("first"), second = temp_dir("second");
    harness::train_favae(harness::RunConfig::from(config), full);
    config.set("run.steps", "3");
    harness::train_favae(harness::RunConfig::from(config), first);
    config.set("run.steps", "6");
    harness::train_favae(harness::RunConfig::from(config), second, first / "checkpoint.bin");
    EXPECT_EQ(slurp(full / "checkpoint.bin"), slurp(second / "checkpoint.bin"));

    config.set("model.n_z", "3");
    EXPECT_THROW(harness::train_favae(harness::RunConfig::from(config), temp_dir("bad"), first / "checkpoint.bin"),
                 UsageError);
}

TEST(Diagnostics, FreqMapsAndReconstructionFromACheckpoint) {
    const auto run = harness::RunConfig::from(tiny_config());
    const auto dir = temp_dir("diag");
    const auto trained = harness::train_favae(run, dir);
    const auto model = checkpoint::load(trained.checkpoint).make_model();
    const auto eval = harness::make_datasets(run).second;

    images::Image img{8, 8, 1, std::vector<std::uint8_t>(64)};
    for (int i = 0; i < 64; ++i) img.pixels[i] = static_cast<std::uint8_t>((i % 8 + i / 8) % 2 * 255);
    const auto alone = harness::write_freq_maps(img, nullptr, dir / "alone");
    ASSERT_EQ(alone.size(), 1u);
    const auto maps = harness::write_freq_maps(img, &model, dir / "maps");
    // input, reconstruction, then A_i and B_i at both levels and C_i at both FCM levels
    EXPECT_EQ(maps.size(), 2u + 3u * 2u);
    for (const auto& m : maps) {
        const auto pgm = images::read_pnm(m);
        EXPECT_EQ(pgm.channels, 1);
    }
    images::Image wrong{16, 16, 1, std::vector<std::uint8_t>(256)};
    EXPECT_THROW(harness::write_freq_maps(wrong, &model, dir / "wrong"), DimensionError);

    const auto r = harness::reconstruct(model, eval, dir / "recon");
    EXPECT_TRUE(std::isfinite(r.psnr));
    EXPECT_TRUE(fs::exists(r.grid));
    EXPECT_THROW(harness::reconstruct(model, data::from_image(wrong), dir / "recon2"), DimensionError);
}

TEST(Diagnostics, CatTrainingWritesSamplesPerClass) {
    const auto run = harness::RunConfig::from(tiny_config());
    const auto dir = temp_dir("cat");
    const auto favae = harness::train_favae(run, dir / "favae");
    const auto r = harness::train_cat(run, favae.checkpoint, dir / "cat");
    EXPECT_EQ(r.nll.size(), 4u);
    EXPECT_EQ(r.histograms.size(), 3u);  // one per checker pattern
    for (const auto& h : r.histograms) {
        double total = 0;
        for (double v : h) total += v;
        EXPECT_EQ(total, 4.0 * 16.0);  // four samples of a 4x4 latent
    }
    EXPECT_GE(r.js, 0.0);
    for (const char* f : {"cat.bin", "cat_metrics.csv", "cat_samples.csv", "cat_js.txt", "samples_0.ppm", "samples_2.ppm"}) {
        EXPECT_TRUE(fs::exists(dir / "cat" / f)) << f;
    }
    const auto ck = checkpoint::load_cat(r.checkpoint);
    EXPECT_EQ(ck.spec.vocab, 16);
    EXPECT_EQ(ck.spec.context, 16);
    EXPECT_EQ(ck.spec.cond_vocab, 3);
    EXPECT_THROW(checkpoint::load(r.checkpoint), IoError);

    auto other = tiny_config();
    other.set("data.size", "16");
    EXPECT_THROW(harness::train_cat(harness::RunConfig::from(other), favae.checkpoint, dir / "bad"), UsageError);
}

TEST(Gradcheck, BatteryPassesAndRejectsUnknownScopes) {
    for (const auto& line : harness::gradcheck_battery("spectral")) {
        EXPECT_TRUE(line.pass) << line.op << " " << line.max_rel_error;
    }
    EXPECT_THROW(harness::gradcheck_battery("everything"), UsageError);
}
