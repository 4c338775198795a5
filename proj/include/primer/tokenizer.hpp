#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace primer {

/// Character-level vocabulary: 4 reserved ids, then space, ':', a-z, A-Z, 0-5 (64 ids total).
class CharTokenizer {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;
    static constexpr int kVocabSize = 64;

    static constexpr std::string_view alphabet() {
        return " :abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ012345";
    }

    static int encode_char(char c) {
        static const auto table = [] {
            std::array<int, 256> t{};
            t.fill(kUnk);
            const auto a = alphabet();
            for (std::size_t i = 0; i < a.size(); ++i) {
                t[static_cast<unsigned char>(a[i])] = static_cast<int>(i) + 4;
            }
            return t;
        }();
        return table[static_cast<unsigned char>(c)];
    }

    static std::vector<int> encode(std::string_view text) {
        std::vector<int> ids;
        ids.reserve(text.size());
        for (char c : text) ids.push_back(encode_char(c));
        return ids;
    }

    /// Decodes until the first eos; pad/bos are dropped and unk renders as '?'.
    static std::string decode(const std::vector<int>& ids) {
        std::string out;
        const auto a = alphabet();
        for (int id : ids) {
            if (id == kEos) break;
            if (id == kPad || id == kBos) continue;
            if (id == kUnk || id < 4 || static_cast<std::size_t>(id - 4) >= a.size()) {
                out.push_back('?');
            } else {
                out.push_back(a[static_cast<std::size_t>(id - 4)]);
            }
        }
        return out;
    }

    static bool representable(std::string_view text) {
        for (char c : text) {
            if (encode_char(c) == kUnk) return false;
        }
        return true;
    }
};

}  // namespace primer
