#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "capfuse/error.hpp"

namespace capfuse {

enum class Split { Train, Val, Test };

enum class Characteristic { Visual, Shape, Texture, Template };

inline constexpr std::array<Characteristic, 3> kCaptionCharacteristics = {
    Characteristic::Visual, Characteristic::Shape, Characteristic::Texture};

inline std::string_view to_string(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    }
    return "train";
}

inline Split parse_split(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    fail(Errc::InvalidArgument, "unknown split '" + std::string(s) + "'");
}

inline std::string_view to_string(Characteristic c) {
    switch (c) {
    case Characteristic::Visual: return "visual";
    case Characteristic::Shape: return "shape";
    case Characteristic::Texture: return "texture";
    case Characteristic::Template: return "template";
    }
    return "visual";
}

inline Characteristic parse_characteristic(std::string_view s) {
    if (s == "visual") return Characteristic::Visual;
    if (s == "shape") return Characteristic::Shape;
    if (s == "texture") return Characteristic::Texture;
    if (s == "template") return Characteristic::Template;
    fail(Errc::InvalidArgument, "unknown caption characteristic '" + std::string(s) + "'");
}

struct SampleRecord {
    std::string sample_id;
    int class_id = 0;
    std::string class_name;
    Split split = Split::Train;

    friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct CaptionRecord {
    std::string sample_id;
    Characteristic characteristic = Characteristic::Visual;
    std::string raw_text;
    std::string final_text;
    std::string model_id;
    std::string prompt_hash;

    friend bool operator==(const CaptionRecord&, const CaptionRecord&) = default;
};

} // namespace capfuse
