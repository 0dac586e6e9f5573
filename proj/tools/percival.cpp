#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "percival/corpus.hpp"
#include "percival/evalkit.hpp"
#include "percival/filter.hpp"
#include "percival/model_io.hpp"
#include "percival/synth.hpp"

using namespace percival;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + p.string());
}

json errors_json(const std::vector<corpus::EntryError>& errs) {
    json out = json::array();
    for (const auto& e : errs) out.push_back({{"source", e.source}, {"error", e.error}});
    return out;
}

struct PageArgs {
    std::string fixture, model, mode = "sync", policy = "clear", events;
    unsigned lanes = 1;
    float threshold = kDefaultThreshold;
    std::size_t memo = kDefaultMemoCapacity;
};

int run_page_cmd(const PageArgs& a) {
    PipelineConfig cfg;
    cfg.mode = parse_mode(a.mode);
    cfg.lanes = a.lanes;
    cfg.threshold = a.threshold;
    cfg.memo_capacity = a.memo;
    cfg.policy = BlockingPolicy::parse(a.policy);
    const PageFixture page = load_fixture(a.fixture);
    const PageResult r = run_page(page, cfg, model_io::load_model_file(a.model));
    if (!a.events.empty()) {
        std::ofstream out(a.events);
        for (const auto& e : r.events) out << event_to_json(e) << '\n';
    }
    std::cout << stats_to_json(r.stats) << '\n';
    return 0;
}

int classify_cmd(const std::string& model_path, float threshold, const std::vector<std::string>& images) {
    Classifier c(model_io::load_model_file(model_path), threshold);
    int rc = 0;
    for (const auto& path : images) {
        try {
            const auto bytes = model_io::read_file(path);
            const auto t0 = std::chrono::steady_clock::now();
            const Bitmap b = decode_image(bytes, fs::path(path).extension().string());
            const auto t1 = std::chrono::steady_clock::now();
            const Verdict v = c.classify(b);
            std::cout << json{{"path", path},
                              {"is_ad", v.is_ad},
                              {"p_ad", v.p_ad},
                              {"bypassed", v.bypassed},
                              {"decode_micros", std::chrono::duration_cast<std::chrono::microseconds>(t1 - t0).count()},
                              {"inference_micros", v.inference_micros}}
                             .dump()
                      << '\n';
        } catch (const std::exception& e) {
            std::cout << json{{"path", path}, {"error", e.what()}}.dump() << '\n';
            rc = 1;
        }
    }
    return rc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"percival: perceptual ad-image classification toolkit"};
    app.require_subcommand(1);

    // run-page
    PageArgs pa;
    auto* run = app.add_subcommand("run-page", "Run a page fixture through the render pipeline");
    run->add_option("--fixture", pa.fixture, "Fixture directory (manifest.jsonl)")->required();
    run->add_option("--model", pa.model, "PMDL model file")->required();
    run->add_option("--mode", pa.mode, "sync | async | off");
    run->add_option("--lanes", pa.lanes, "Raster lanes");
    run->add_option("--threshold", pa.threshold);
    run->add_option("--memo-capacity", pa.memo);
    run->add_option("--policy", pa.policy, "clear | replace=PATH");
    run->add_option("--events", pa.events, "Write render events as JSONL");

    // classify
    std::string cl_model;
    float cl_threshold = kDefaultThreshold;
    std::vector<std::string> cl_images;
    auto* cls = app.add_subcommand("classify", "Classify image files");
    cls->add_option("--model", cl_model)->required();
    cls->add_option("--threshold", cl_threshold);
    cls->add_option("images", cl_images)->required();

    // label
    std::string lb_rules, lb_url, lb_doc, lb_type = "image";
    auto* label = app.add_subcommand("label", "Label a URL with a filter list");
    label->add_option("--rules", lb_rules, "Filter list file")->required();
    label->add_option("url", lb_url)->required();
    label->add_option("--document-domain", lb_doc);
    label->add_option("--type", lb_type, "image | other");

    // corpus
    auto* corp = app.add_subcommand("corpus", "Build training corpora");
    corp->require_subcommand(1);
    std::string root;
    std::string manifest;
    corpus::IngestOptions iopt;
    int timeout_s = 60;
    bool no_merge = false;
    auto* ingest = corp->add_subcommand("ingest", "Fetch or read images listed in a manifest");
    ingest->add_option("--root", root, "Corpus directory")->required();
    ingest->add_option("--manifest", manifest, "JSONL manifest")->required();
    ingest->add_option("--concurrency", iopt.fetch_concurrency);
    ingest->add_option("--per-host", iopt.per_host_limit);
    ingest->add_option("--timeout", timeout_s, "Seconds per fetch");
    ingest->add_option("--user-agent", iopt.user_agent);
    ingest->add_flag("--no-merge", no_merge, "Keep duplicate bytes as separate records");

    bool near = false;
    unsigned near_bits = 4;
    auto* dd = corp->add_subcommand("dedupe", "Merge exact duplicates");
    dd->add_option("--root", root)->required();
    dd->add_flag("--near", near, "Also report perceptual near-duplicates");
    dd->add_option("--near-bits", near_bits);

    std::string cl_rules, cm_model;
    float cm_threshold = kDefaultThreshold;
    bool relabel = false;
    auto* cl = corp->add_subcommand("label", "Label records with a filter list or a model");
    cl->add_option("--root", root)->required();
    auto* rules_opt = cl->add_option("--rules", cl_rules);
    auto* model_opt = cl->add_option("--model", cm_model);
    rules_opt->excludes(model_opt);
    cl->add_option("--threshold", cm_threshold);
    cl->add_flag("--relabel", relabel, "Also replace machine labels");

    std::uint64_t seed = 1;
    double test_fraction = 0.2;
    std::string split_out;
    auto* sp = corp->add_subcommand("split", "Balance classes and write train/test manifests");
    sp->add_option("--root", root)->required();
    sp->add_option("--seed", seed);
    sp->add_option("--test-fraction", test_fraction);
    sp->add_option("--out", split_out)->required();

    // eval
    std::string ev_model, ev_corpus, ev_json, ev_csv;
    float ev_threshold = kDefaultThreshold;
    auto* ev = app.add_subcommand("eval", "Evaluate a model on a labelled manifest");
    ev->add_option("--model", ev_model)->required();
    ev->add_option("--corpus", ev_corpus, "index.jsonl or split manifest")->required();
    ev->add_option("--threshold", ev_threshold);
    ev->add_option("--json", ev_json, "Write the report here");
    ev->add_option("--csv", ev_csv, "Write the per-image log here");

    // bench
    std::string bn_fixture, bn_configs, bn_model, bn_json, bn_csv;
    eval::BenchOptions bopt;
    auto* bn = app.add_subcommand("bench", "Time pipeline configurations on a fixture");
    bn->add_option("--fixture", bn_fixture)->required();
    bn->add_option("--configs", bn_configs, "JSON array of pipeline configs")->required();
    bn->add_option("--model", bn_model)->required();
    bn->add_option("--repetitions", bopt.repetitions);
    bn->add_option("--warmups", bopt.warmups);
    bn->add_option("--json", bn_json);
    bn->add_option("--csv", bn_csv);

    // model
    auto* model = app.add_subcommand("model", "Model files");
    model->require_subcommand(1);
    std::string mi_out, mi_kind = "zero";
    std::uint64_t mi_seed = 1;
    auto* minit = model->add_subcommand("init", "Write a model: zero, random or red-probe weights");
    minit->add_option("--out", mi_out)->required();
    minit->add_option("--kind", mi_kind, "zero | random | red-probe");
    minit->add_option("--seed", mi_seed);
    std::string info_path;
    auto* minfo = model->add_subcommand("info", "Validate a model and print its id");
    minfo->add_option("path", info_path)->required();

    // fixture
    auto* fx = app.add_subcommand("fixture", "Synthetic page fixtures");
    fx->require_subcommand(1);
    std::string fx_out;
    SynthOptions so;
    auto* fsyn = fx->add_subcommand("synth", "Write a synthetic page");
    fsyn->add_option("--out", fx_out)->required();
    fsyn->add_option("--frames", so.frames);
    fsyn->add_option("--small", so.small_frames, "Frames below the bypass size");
    fsyn->add_option("--ad-fraction", so.ad_fraction);
    fsyn->add_option("--distinct", so.distinct, "Cycle this many images (0 = all unique)");
    fsyn->add_option("--seed", so.seed);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return run_page_cmd(pa);
        if (*cls) return classify_cmd(cl_model, cl_threshold, cl_images);
        if (*label) {
            const filter::RuleSet rules = filter::RuleSet::load(lb_rules);
            const auto type = lb_type == "image" ? filter::ResourceType::Image : filter::ResourceType::Other;
            const filter::Decision d = rules.match({lb_url, lb_doc, type});
            json j{{"url", lb_url}, {"label", d.blocked ? "ad" : "non-ad"}};
            if (d.matched_rule) j["matched_rule"] = *d.matched_rule;
            if (d.exception_rule) j["exception_rule"] = *d.exception_rule;
            std::cout << j.dump() << '\n';
            return 0;
        }
        if (*ingest) {
            iopt.timeout = std::chrono::seconds(timeout_s);
            iopt.merge_duplicates = !no_merge;
            corpus::Corpus c = corpus::Corpus::open(root);
            const auto r = corpus::ingest(c, corpus::load_manifest(manifest), iopt);
            c.save();
            std::cout << json{{"entries", r.entries},
                              {"added", r.added},
                              {"merged", r.merged},
                              {"records", c.records().size()},
                              {"fetch_failures", errors_json(r.fetch_failures)},
                              {"decode_failures", errors_json(r.decode_failures)},
                              {"label_conflicts", errors_json(r.label_conflicts)}}
                             .dump(2)
                      << '\n';
            return 0;
        }
        if (*dd) {
            corpus::Corpus c = corpus::Corpus::open(root);
            const auto r = corpus::dedupe(c, near, near_bits);
            c.save();
            json merges = json::array();
            for (const auto& m : r.merges) merges.push_back({{"sha256", m.sha256}, {"removed_records", m.removed_records}});
            json nears = json::array();
            for (const auto& [a, b] : r.near_duplicates) nears.push_back({a, b});
            std::cout << json{{"merged_records", r.merged_records},
                              {"merges", merges},
                              {"records", c.records().size()},
                              {"label_conflicts", errors_json(r.label_conflicts)},
                              {"near_duplicates", nears}}
                             .dump(2)
                      << '\n';
            return 0;
        }
        if (*cl) {
            if (cl_rules.empty() == cm_model.empty()) throw std::invalid_argument("give exactly one of --rules, --model");
            corpus::Corpus c = corpus::Corpus::open(root);
            const corpus::LabelReport r =
                cl_rules.empty()
                    ? corpus::auto_label(c, Classifier(model_io::load_model_file(cm_model), cm_threshold), relabel)
                    : corpus::auto_label(c, filter::RuleSet::load(cl_rules), relabel);
            c.save();
            std::cout << json{{"labeled_ad", r.labeled_ad},
                              {"labeled_non_ad", r.labeled_non_ad},
                              {"kept_human", r.kept_human},
                              {"kept_existing", r.kept_existing},
                              {"no_url", r.no_url},
                              {"bypassed", r.bypassed},
                              {"errors", errors_json(r.errors)}}
                             .dump(2)
                      << '\n';
            return 0;
        }
        if (*sp) {
            const corpus::Corpus c = corpus::Corpus::open(root);
            const corpus::Split s = corpus::balance_and_split(c, seed, test_fraction);
            corpus::write_split(c, s, split_out);
            std::cout << json{{"ads_available", s.ads_available},
                              {"non_ads_available", s.non_ads_available},
                              {"train", s.train.size()},
                              {"test", s.test.size()}}
                             .dump(2)
                      << '\n';
            return 0;
        }
        if (*ev) {
            const Classifier c(model_io::load_model_file(ev_model), ev_threshold);
            const eval::EvalResult r = eval::evaluate_model(c, eval::load_labeled_manifest(ev_corpus));
            const std::string report = eval::eval_to_json(r);
            if (!ev_json.empty()) write_text(ev_json, report + "\n");
            if (!ev_csv.empty()) write_text(ev_csv, eval::eval_to_csv(r));
            std::cout << report << '\n';
            return 0;
        }
        if (*bn) {
            const auto configs = eval::parse_bench_configs(slurp(bn_configs));
            const eval::BenchReport r =
                eval::bench_pipeline(load_fixture(bn_fixture), configs, model_io::load_model_file(bn_model), bopt);
            const std::string report = eval::bench_to_json(r);
            if (!bn_json.empty()) write_text(bn_json, report + "\n");
            if (!bn_csv.empty()) write_text(bn_csv, eval::bench_to_csv(r));
            std::cout << eval::bench_to_csv(r);
            return 0;
        }
        if (*minit) {
            NetworkSpec spec = reference_network();
            if (mi_kind == "random") init_random_weights(spec, mi_seed);
            else if (mi_kind == "red-probe") init_channel_probe_weights(spec, 0, 20.0f, -10.0f);
            else if (mi_kind != "zero") throw std::invalid_argument("unknown model kind '" + mi_kind + "'");
            model_io::save_model_file(extract_weights(spec), mi_out);
            std::cout << sha256_hex(model_io::read_file(mi_out)) << '\n';
            return 0;
        }
        if (*minfo) {
            const auto bytes = model_io::read_file(info_path);
            model_io::load_model(bytes);
            std::cout << json{{"model_id", sha256_hex(bytes)},
                              {"parameters", parameter_count(reference_network())},
                              {"bytes", bytes.size()}}
                             .dump()
                      << '\n';
            return 0;
        }
        if (*fsyn) {
            save_fixture(fx_out, synth_page(so));
            std::cout << "wrote " << so.frames << " frames to " << fx_out << '\n';
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "percival: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
