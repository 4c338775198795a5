#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "primer/checkpoint.hpp"

using namespace primer;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("primer_ck_" + std::to_string(::getpid()) + "_" + name);
}

Seq2SeqModel fully_equipped(std::uint64_t seed) {
    Seq2SeqModel m(ModelConfig{}, seed);
    m.attach_adapters(0.02);
    m.insert_meta_adapters(8);
    m.attach_prompt(5, 0.02);
    m.attach_meta_prompt(3, 0.02);
    // Give the zero-initialized pieces non-trivial values so the round trip is meaningful.
    for (const auto& p : m.parameters()) {
        Tensor t = p.value;
        for (auto& x : t.data_mut()) x += 0.001;
    }
    return m;
}

}  // namespace

TEST(Checkpoint, RoundTripPreservesEveryValueBitForBit) {
    const auto m = fully_equipped(3);
    const auto path = temp_path("roundtrip.bin");
    save_model(path.string(), m);
    const auto back = load_model(path.string());
    std::filesystem::remove(path);
    EXPECT_EQ(back.config(), m.config());
    const auto a = m.parameters();
    const auto b = back.parameters();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].name, b[i].name);
        EXPECT_EQ(a[i].kind, b[i].kind);
        EXPECT_EQ(a[i].value.shape(), b[i].value.shape());
        EXPECT_TRUE(std::equal(a[i].value.data().begin(), a[i].value.data().end(), b[i].value.data().begin()))
            << a[i].name;
    }
    const std::vector<Example> ex{{"copy: abc", "abc"}};
    EXPECT_EQ(back.loss(ex).item(), m.loss(ex).item());
}

TEST(Checkpoint, BadMagicIsInputError) {
    const auto path = temp_path("magic.bin");
    std::ofstream(path, std::ios::binary) << "NOTACHECKPOINT-------";
    EXPECT_THROW(load_checkpoint(path.string()), InputError);
    std::filesystem::remove(path);
}

TEST(Checkpoint, TruncatedFileIsInputError) {
    const auto path = temp_path("trunc.bin");
    const Seq2SeqModel model(ModelConfig{}, 1);
    save_model(path.string(), model);
    const auto full = std::filesystem::file_size(path);
    for (auto keep : {std::uintmax_t{10}, std::uintmax_t{70}, full / 2, full - 1}) {
        save_model(path.string(), model);
        std::filesystem::resize_file(path, keep);
        EXPECT_THROW(load_model(path.string()), InputError) << keep;
    }
    std::filesystem::remove(path);
}

TEST(Checkpoint, MissingFileIsInputError) {
    EXPECT_THROW(load_checkpoint("/nonexistent/model.bin"), InputError);
}

TEST(Checkpoint, RestoreRejectsShapeAndKindMismatch) {
    const auto path = temp_path("mismatch.bin");
    Seq2SeqModel with_prompt(ModelConfig{}, 1);
    with_prompt.attach_prompt(4, 0.02);
    save_model(path.string(), with_prompt);
    auto ck = load_checkpoint(path.string());
    std::filesystem::remove(path);

    Seq2SeqModel longer(ModelConfig{}, 1);
    longer.attach_prompt(6, 0.02);
    EXPECT_THROW(restore_parameters(longer.parameters(), ck), InputError);

    ck.entries.at("prompt.embed").kind = ElementKind::MetaPrompt;
    EXPECT_THROW(restore_parameters(with_prompt.parameters(), ck), InputError);

    Seq2SeqModel extra(ModelConfig{}, 1);
    extra.attach_prompt(4, 0.02);
    extra.attach_adapters(0.02);
    ck.entries.at("prompt.embed").kind = ElementKind::Prompt;
    EXPECT_THROW(restore_parameters(extra.parameters(), ck), InputError);
}
