// SPDX-License-Identifier: Apache-2.0
//
// Prompt registry: one versioned document mapping keys to templates with
// `{name}` placeholders, plus the named extraction, selection and refinement
// profiles that reference those templates. The default registry is compiled
// in from data/prompt_registry.json; a file with the same schema overrides it.
#pragma once

#include "tts/core.hpp"
#include "tts/json_io.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace tts {

struct ExtractionProfile {
    enum class Kind { section, fenced_code };

    std::string name;
    Kind kind = Kind::section;
    std::string marker;      // section header, e.g. "*** Final Answer ***"
    bool normalize = true;   // code answers keep their text (trim only)
};

struct SelectionProfile {
    std::string name;
    std::string system_key;
    std::string question_key;
    int index_base = 0;            // 0-based (math) or 1-based (code) judge protocol
    std::string candidate_label;   // e.g. "Candidate {index}:"
};

struct RefinementProfile {
    std::string name;
    std::string system_key;
    std::string question_key;
    std::string negative_section_key;
    std::string history_section_key;
    bool history = false;
};

struct DomainProfile {
    std::string solve_system_key;  // empty: no system prompt
    std::string extraction;
    std::string selection;
};

class PromptRegistry {
public:
    static PromptRegistry defaults();
    static PromptRegistry from_json(const Json& doc);
    static PromptRegistry load(const std::filesystem::path& path);

    int schema_version() const { return schema_version_; }

    /// Throws Error(template_missing) for unknown keys.
    const std::string& get(std::string_view key) const;
    bool has(std::string_view key) const;

    const ExtractionProfile& extraction(std::string_view name) const;
    const SelectionProfile& selection(std::string_view name) const;
    const RefinementProfile& refinement(std::string_view name) const;
    const DomainProfile& domain(DomainTag tag) const;

    /// System prompt used for first-turn generation in a domain.
    std::string solve_system(DomainTag tag) const;

    Json to_json() const;

private:
    int schema_version_ = 1;
    std::map<std::string, std::string, std::less<>> templates_;
    std::map<std::string, ExtractionProfile, std::less<>> extraction_;
    std::map<std::string, SelectionProfile, std::less<>> selection_;
    std::map<std::string, RefinementProfile, std::less<>> refinement_;
    std::map<DomainTag, DomainProfile> domains_;
};

/// Replaces `{key}` for every key present in `values`; other braces are kept.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string, std::less<>>& values);

}  // namespace tts
