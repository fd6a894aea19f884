// SPDX-License-Identifier: Apache-2.0
#include "tts/prompts.hpp"
#include "tts/error.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace tts {

namespace detail {
extern const std::string_view kDefaultRegistryJson;
}

namespace {

template <typename Map>
const auto& find_or_throw(const Map& m, std::string_view key, const char* what)
{
    auto it = m.find(key);
    if (it == m.end())
        throw Error(ErrorCode::template_missing, std::string("unknown ") + what + " '" + std::string(key) + "'");
    return it->second;
}

}  // namespace

PromptRegistry PromptRegistry::defaults()
{
    static const PromptRegistry cached = from_json(Json::parse(detail::kDefaultRegistryJson));
    return cached;
}

PromptRegistry PromptRegistry::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::not_found, "cannot open prompt registry " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(Json::parse(ss.str()));
}

PromptRegistry PromptRegistry::from_json(const Json& doc)
{
    PromptRegistry reg;
    reg.schema_version_ = doc.value("schema_version", 1);
    for (const auto& [key, value] : doc.at("templates").items())
        reg.templates_[key] = value.get<std::string>();

    for (const auto& [name, p] : doc.at("extraction_profiles").items()) {
        ExtractionProfile prof;
        prof.name = name;
        const auto kind = p.at("kind").get<std::string>();
        if (kind == "section")
            prof.kind = ExtractionProfile::Kind::section;
        else if (kind == "fenced_code")
            prof.kind = ExtractionProfile::Kind::fenced_code;
        else
            throw Error(ErrorCode::invalid_config, "unknown extraction kind '" + kind + "'");
        prof.marker = p.value("marker", "");
        prof.normalize = p.value("normalize", true);
        reg.extraction_[name] = std::move(prof);
    }
    for (const auto& [name, p] : doc.at("selection_profiles").items()) {
        SelectionProfile prof;
        prof.name = name;
        prof.system_key = p.at("system").get<std::string>();
        prof.question_key = p.at("question").get<std::string>();
        prof.index_base = p.value("index_base", 0);
        prof.candidate_label = p.value("candidate_label", "Candidate {index}:");
        reg.selection_[name] = std::move(prof);
    }
    for (const auto& [name, p] : doc.at("refinement_profiles").items()) {
        RefinementProfile prof;
        prof.name = name;
        prof.system_key = p.at("system").get<std::string>();
        prof.question_key = p.at("question").get<std::string>();
        prof.negative_section_key = p.value("negative_section", "");
        prof.history_section_key = p.value("history_section", "");
        prof.history = p.value("history", false);
        reg.refinement_[name] = std::move(prof);
    }
    for (const auto& [name, p] : doc.at("domains").items()) {
        auto tag = parse_domain(name);
        if (!tag)
            throw Error(ErrorCode::invalid_config, "unknown domain '" + name + "' in registry");
        reg.domains_[*tag] = DomainProfile{p.value("solve_system", ""), p.at("extraction").get<std::string>(),
                                           p.at("selection").get<std::string>()};
    }
    return reg;
}

const std::string& PromptRegistry::get(std::string_view key) const
{
    return find_or_throw(templates_, key, "template");
}

bool PromptRegistry::has(std::string_view key) const { return templates_.find(key) != templates_.end(); }

const ExtractionProfile& PromptRegistry::extraction(std::string_view name) const
{
    return find_or_throw(extraction_, name, "extraction profile");
}

const SelectionProfile& PromptRegistry::selection(std::string_view name) const
{
    return find_or_throw(selection_, name, "selection profile");
}

const RefinementProfile& PromptRegistry::refinement(std::string_view name) const
{
    return find_or_throw(refinement_, name, "refinement profile");
}

const DomainProfile& PromptRegistry::domain(DomainTag tag) const
{
    auto it = domains_.find(tag);
    if (it == domains_.end())
        throw Error(ErrorCode::template_missing, "no domain profile for " + std::string(to_string(tag)));
    return it->second;
}

std::string PromptRegistry::solve_system(DomainTag tag) const
{
    const auto& key = domain(tag).solve_system_key;
    return key.empty() ? std::string{} : get(key);
}

Json PromptRegistry::to_json() const
{
    Json doc;
    doc["schema_version"] = schema_version_;
    Json templates = Json::object();
    for (const auto& [k, v] : templates_)
        templates[k] = v;
    doc["templates"] = std::move(templates);
    Json ex = Json::object();
    for (const auto& [k, p] : extraction_) {
        Json e{{"kind", p.kind == ExtractionProfile::Kind::section ? "section" : "fenced_code"}};
        if (!p.marker.empty())
            e["marker"] = p.marker;
        e["normalize"] = p.normalize;
        ex[k] = std::move(e);
    }
    doc["extraction_profiles"] = std::move(ex);
    Json sel = Json::object();
    for (const auto& [k, p] : selection_)
        sel[k] = Json{{"system", p.system_key},
                      {"question", p.question_key},
                      {"index_base", p.index_base},
                      {"candidate_label", p.candidate_label}};
    doc["selection_profiles"] = std::move(sel);
    Json ref = Json::object();
    for (const auto& [k, p] : refinement_)
        ref[k] = Json{{"system", p.system_key},
                      {"question", p.question_key},
                      {"negative_section", p.negative_section_key},
                      {"history_section", p.history_section_key},
                      {"history", p.history}};
    doc["refinement_profiles"] = std::move(ref);
    Json dom = Json::object();
    for (const auto& [tag, p] : domains_)
        dom[std::string(tts::to_string(tag))] =
            Json{{"solve_system", p.solve_system_key}, {"extraction", p.extraction}, {"selection", p.selection}};
    doc["domains"] = std::move(dom);
    return doc;
}

std::string render_template(std::string_view tmpl, const std::map<std::string, std::string, std::less<>>& values)
{
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '{') {
            auto close = tmpl.find('}', i + 1);
            if (close != std::string_view::npos) {
                auto key = tmpl.substr(i + 1, close - i - 1);
                bool ident = !key.empty();
                for (char c : key)
                    ident = ident && (std::isalnum(static_cast<unsigned char>(c)) || c == '_');
                if (ident) {
                    if (auto it = values.find(key); it != values.end()) {
                        out += it->second;
                        i = close + 1;
                        continue;
                    }
                }
            }
        }
        out += tmpl[i++];
    }
    return out;
}

}  // namespace tts
