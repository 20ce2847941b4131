#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "capfuse/dataset/types.hpp"
#include "capfuse/error.hpp"

namespace capfuse {

struct PromptTemplate {
    std::string class_name;
    std::string domain;
    Characteristic characteristic = Characteristic::Visual;
    int word_budget = 50;

    std::string render() const {
        if (class_name.empty()) fail(Errc::EmptySlot, "prompt class_name is empty");
        if (domain.empty()) fail(Errc::EmptySlot, "prompt domain is empty");
        if (characteristic == Characteristic::Template)
            fail(Errc::InvalidArgument, "template is not a caption characteristic");
        return "To differentiate this " + class_name + " photo from other " + domain +
               " photos, describe its primary " + std::string(to_string(characteristic)) +
               " characteristics based on the photo in " + std::to_string(word_budget) + " words.";
    }
};

inline std::string build_prompt(std::string_view class_name, std::string_view domain, Characteristic ch) {
    return PromptTemplate{std::string(class_name), std::string(domain), ch}.render();
}

inline std::string build_prompt(std::string_view class_name, std::string_view domain, std::string_view ch) {
    if (ch.empty()) fail(Errc::EmptySlot, "prompt characteristic is empty");
    return build_prompt(class_name, domain, parse_characteristic(ch));
}

inline std::string class_prefix(std::string_view class_name) {
    if (class_name.empty()) fail(Errc::EmptySlot, "prefix class_name is empty");
    return "a photo of a " + std::string(class_name) + ". ";
}

inline std::string prepend_prefix(std::string_view class_name, std::string_view raw_text) {
    return class_prefix(class_name) + std::string(raw_text);
}

inline std::string zero_shot_prompt(const std::vector<std::string>& class_names) {
    if (class_names.empty()) fail(Errc::EmptySlot, "zero-shot class list is empty");
    std::string joined;
    for (const auto& c : class_names) {
        if (c.empty()) fail(Errc::EmptySlot, "zero-shot class name is empty");
        if (!joined.empty()) joined += ", ";
        joined += c;
    }
    return "Select the most appropriate category for the image from the following options: " + joined +
           ". Write only the category name.";
}

} // namespace capfuse
