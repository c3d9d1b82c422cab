// SPDX-License-Identifier: Apache-2.0
#include <searchlab/errors.hpp>
#include <searchlab/textio.hpp>
#include <searchlab/trajectory.hpp>

#include <json.hpp>

#include <cmath>
#include <sstream>

namespace searchlab
{

std::string_view to_string(StepKind kind)
{
    switch (kind)
    {
        case StepKind::Think: return "think";
        case StepKind::Search: return "search";
        case StepKind::Information: return "information";
        case StepKind::Answer: return "answer";
    }
    return "?";
}

std::size_t Trajectory::turn_count() const
{
    return std::size_t(std::count_if(_steps.begin(), _steps.end(),
                                     [](const Step& s) { return s.kind() == StepKind::Search; }));
}

std::size_t Trajectory::actor_step_count() const
{
    return std::size_t(std::count_if(_steps.begin(), _steps.end(), [](const Step& s) { return s.is_actor(); }));
}

std::size_t Trajectory::budget_used() const
{
    return std::size_t(std::count_if(_steps.begin(), _steps.end(), [](const Step& s) {
        return s.kind() == StepKind::Search || s.kind() == StepKind::Think;
    }));
}

std::optional<EntityId> Trajectory::answer() const
{
    if (_steps.empty() || _steps.back().kind() != StepKind::Answer)
        return std::nullopt;
    return std::get<AnswerPayload>(_steps.back().payload).entity;
}

bool Trajectory::is_terminal() const
{
    return !_steps.empty() && _steps.back().kind() == StepKind::Answer;
}

std::vector<QueryResult> Trajectory::query_results() const
{
    std::vector<QueryResult> out;
    for (const auto& s: _steps)
        if (s.kind() == StepKind::Information)
            out.push_back(std::get<QueryResult>(s.payload));
    return out;
}

std::vector<Query> Trajectory::queries() const
{
    std::vector<Query> out;
    for (const auto& s: _steps)
        if (s.kind() == StepKind::Search)
            out.push_back(std::get<Query>(s.payload));
    return out;
}

std::size_t Trajectory::actor_step_index(std::size_t i) const
{
    for (std::size_t idx = 0; idx < _steps.size(); ++idx)
        if (_steps[idx].is_actor() && i-- == 0)
            return idx;
    throw std::out_of_range("actor step " + std::to_string(i) + " out of range");
}

double Trajectory::total_logprob() const
{
    double sum = 0.0;
    for (const auto& s: _steps)
        if (s.actor_logprob)
            sum += *s.actor_logprob;
    return sum;
}

void Trajectory::validate(std::size_t budget) const
{
    for (std::size_t i = 0; i < _steps.size(); ++i)
    {
        const auto kind = _steps[i].kind();
        const auto where = " at step " + std::to_string(i);
        if (kind == StepKind::Information)
        {
            if (_steps[i].actor_logprob)
                throw StructuralError("information step carries an actor log-probability" + where);
            if (i == 0 || _steps[i - 1].kind() != StepKind::Search)
                throw StructuralError("information step without a preceding search" + where);
        }
        else if (!_steps[i].actor_logprob)
            throw StructuralError("actor step without a log-probability" + where);
        if (kind == StepKind::Search && (i + 1 >= _steps.size() || _steps[i + 1].kind() != StepKind::Information))
            throw StructuralError("search step not followed by information" + where);
        if (kind == StepKind::Answer && i + 1 != _steps.size())
            throw StructuralError("answer step is not terminal" + where);
    }
    if (budget > 0 && budget_used() > budget)
        throw StructuralError("trajectory uses " + std::to_string(budget_used()) + " turns, budget is "
                              + std::to_string(budget));
}

Prefix take_prefix(const Trajectory& t, std::size_t k)
{
    const auto actors = t.actor_step_count();
    if (k > actors)
        throw std::out_of_range("cut " + std::to_string(k) + " exceeds " + std::to_string(actors) + " actor steps");
    std::vector<Step> kept;
    std::size_t seen = 0;
    for (const auto& s: t.steps())
    {
        if (s.is_actor())
        {
            if (seen == k)
                break;
            ++seen;
        }
        kept.push_back(s);
    }
    return Prefix { Trajectory(t.question_id(), std::move(kept)), k };
}

Trajectory concat(const Prefix& prefix, std::span<const Step> suffix)
{
    if (prefix.trajectory.is_terminal() && !suffix.empty())
        throw StructuralError("cannot extend a prefix that already ends in an answer");
    auto steps = prefix.trajectory.steps();
    steps.insert(steps.end(), suffix.begin(), suffix.end());
    Trajectory out(prefix.trajectory.question_id(), std::move(steps));
    out.validate();
    return out;
}

namespace
{

void write_result(std::ostream& out, const QueryResult& r)
{
    for (std::size_t i = 0; i < r.chunks.size(); ++i)
    {
        const auto& c = r.chunks[i];
        if (i > 0)
            out << " | ";
        out << '#' << c.id;
        if (c.content)
            out << ' ' << c.content->subject << ' ' << c.content->relation << ' ' << c.content->object;
        else
            out << " -";
        if (c.on_gold_chain)
            out << " *";
    }
}

struct Tagged
{
    std::string_view tag;
    std::string_view body;
    std::string_view rest;
};

Tagged split_tag(std::string_view line, std::size_t line_no)
{
    if (!line.starts_with('<'))
        throw ParseError(line_no, "expected an opening tag");
    const auto close = line.find('>');
    if (close == std::string_view::npos)
        throw ParseError(line_no, "unterminated opening tag");
    const auto tag = line.substr(1, close - 1);
    const auto closing = "</" + std::string(tag) + ">";
    const auto end = line.find(closing, close + 1);
    if (end == std::string_view::npos)
        throw ParseError(line_no, "unbalanced tag <" + std::string(tag) + ">");
    const auto body = line.substr(close + 1, end - close - 1);
    if (body.find('<') != std::string_view::npos)
        throw ParseError(line_no, "misordered or nested tag inside <" + std::string(tag) + ">");
    return { tag, body, textio::trim(line.substr(end + closing.size())) };
}

std::uint64_t need_uint(std::string_view tok, std::size_t line_no)
{
    auto v = textio::parse_uint(tok);
    if (!v)
        throw ParseError(line_no, "expected an unsigned integer, got '" + std::string(tok) + "'");
    return *v;
}

QueryResult read_result(std::string_view body, std::size_t line_no)
{
    QueryResult r;
    body = textio::trim(body);
    while (!body.empty())
    {
        const auto bar = body.find('|');
        const auto part = textio::trim(body.substr(0, bar));
        body = bar == std::string_view::npos ? std::string_view {} : body.substr(bar + 1);
        auto toks = textio::split_ws(part);
        if (toks.empty() || !toks[0].starts_with('#'))
            throw ParseError(line_no, "chunk must start with #id");
        Chunk c;
        c.id = need_uint(toks[0].substr(1), line_no);
        std::size_t next = 1;
        if (toks.size() > 1 && toks[1] == "-")
            next = 2;
        else if (toks.size() >= 4)
        {
            c.content = Triple { EntityId(need_uint(toks[1], line_no)), RelationId(need_uint(toks[2], line_no)),
                                 EntityId(need_uint(toks[3], line_no)) };
            next = 4;
        }
        else
            throw ParseError(line_no, "malformed chunk");
        if (next < toks.size() && toks[next] == "*")
        {
            c.on_gold_chain = true;
            ++next;
        }
        if (next != toks.size())
            throw ParseError(line_no, "trailing tokens in chunk");
        r.chunks.push_back(c);
    }
    return r;
}

} // namespace

std::string serialize(const Trajectory& t)
{
    std::ostringstream out;
    out << "<trajectory question=" << t.question_id() << ">\n";
    for (const auto& s: t.steps())
    {
        const auto tag = to_string(s.kind());
        out << '<' << tag << '>';
        std::visit(
            [&](const auto& p) {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, ThinkPayload>)
                    out << p.token;
                else if constexpr (std::is_same_v<T, Query>)
                    out << p.entity << ' ' << p.relation;
                else if constexpr (std::is_same_v<T, QueryResult>)
                    write_result(out, p);
                else
                    out << p.entity;
            },
            s.payload);
        out << "</" << tag << '>';
        if (s.actor_logprob)
            out << " lp=" << textio::format_double(*s.actor_logprob);
        out << '\n';
    }
    out << "</trajectory>\n";
    return out.str();
}

Trajectory parse_trajectory(std::string_view text)
{
    std::size_t line_no = 0;
    std::optional<QuestionId> question;
    bool closed = false;
    std::vector<Step> steps;

    while (!text.empty())
    {
        const auto nl = text.find('\n');
        auto line = textio::trim(text.substr(0, nl));
        text = nl == std::string_view::npos ? std::string_view {} : text.substr(nl + 1);
        ++line_no;
        if (line.empty() || line.starts_with('#'))
            continue;
        if (closed)
            throw ParseError(line_no, "content after </trajectory>");
        if (!question)
        {
            constexpr std::string_view open = "<trajectory question=";
            if (!line.starts_with(open) || !line.ends_with('>'))
                throw ParseError(line_no, "expected <trajectory question=N>");
            question = QuestionId(need_uint(line.substr(open.size(), line.size() - open.size() - 1), line_no));
            continue;
        }
        if (line == "</trajectory>")
        {
            closed = true;
            continue;
        }

        const auto [tag, body, rest] = split_tag(line, line_no);
        std::optional<double> lp;
        if (!rest.empty())
        {
            auto kv = textio::split_key_value(rest);
            if (!kv || kv->first != "lp")
                throw ParseError(line_no, "unexpected trailer '" + std::string(rest) + "'");
            lp = textio::parse_double(kv->second);
            if (!lp)
                throw ParseError(line_no, "bad log-probability");
        }

        if (!steps.empty() && steps.back().kind() == StepKind::Answer)
            throw ParseError(line_no, "step after <answer>");
        const bool after_search = !steps.empty() && steps.back().kind() == StepKind::Search;
        if (after_search && tag != "information")
            throw ParseError(line_no, "<search> must be followed by <information>, got <" + std::string(tag) + ">");

        Step step;
        if (tag == "think")
            step.payload = ThinkPayload { std::uint32_t(need_uint(textio::trim(body), line_no)) };
        else if (tag == "search")
        {
            auto toks = textio::split_ws(body);
            if (toks.size() != 2)
                throw ParseError(line_no, "<search> takes an entity and a relation");
            step.payload = Query { EntityId(need_uint(toks[0], line_no)), RelationId(need_uint(toks[1], line_no)) };
        }
        else if (tag == "information")
        {
            if (!after_search)
                throw ParseError(line_no, "<information> without a preceding <search>");
            step.payload = read_result(body, line_no);
        }
        else if (tag == "answer")
            step.payload = AnswerPayload { EntityId(need_uint(textio::trim(body), line_no)) };
        else
            throw ParseError(line_no, "unknown tag <" + std::string(tag) + ">");

        if (step.is_actor() != lp.has_value())
            throw ParseError(line_no, step.is_actor() ? "actor step missing lp=" : "information step with lp=");
        step.actor_logprob = lp;
        steps.push_back(std::move(step));
    }
    if (!question)
        throw ParseError(line_no, "empty input");
    if (!closed)
        throw ParseError(line_no, "unbalanced <trajectory>: missing </trajectory>");
    if (!steps.empty() && steps.back().kind() == StepKind::Search)
        throw ParseError(line_no, "trailing <search> without <information>");
    return Trajectory(*question, std::move(steps));
}

void to_json(nlohmann::json& j, const Trajectory& t)
{
    auto steps = nlohmann::json::array();
    for (const auto& s: t.steps())
    {
        nlohmann::json js;
        js["kind"] = to_string(s.kind());
        std::visit(
            [&](const auto& p) {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, ThinkPayload>)
                    js["token"] = p.token;
                else if constexpr (std::is_same_v<T, Query>)
                    js["query"] = { p.entity, p.relation };
                else if constexpr (std::is_same_v<T, QueryResult>)
                {
                    auto chunks = nlohmann::json::array();
                    for (const auto& c: p.chunks)
                    {
                        nlohmann::json jc { { "id", c.id }, { "gold", c.on_gold_chain } };
                        if (c.content)
                            jc["fact"] = { c.content->subject, c.content->relation, c.content->object };
                        chunks.push_back(std::move(jc));
                    }
                    js["chunks"] = std::move(chunks);
                }
                else
                    js["answer"] = p.entity;
            },
            s.payload);
        if (s.actor_logprob)
            js["lp"] = *s.actor_logprob;
        steps.push_back(std::move(js));
    }
    j = nlohmann::json { { "question", t.question_id() }, { "steps", std::move(steps) } };
}

void from_json(const nlohmann::json& j, Trajectory& t)
{
    std::vector<Step> steps;
    for (const auto& js: j.at("steps"))
    {
        Step s;
        const auto kind = js.at("kind").get<std::string>();
        if (kind == "think")
            s.payload = ThinkPayload { js.at("token").get<std::uint32_t>() };
        else if (kind == "search")
            s.payload = Query { js.at("query").at(0).get<EntityId>(), js.at("query").at(1).get<RelationId>() };
        else if (kind == "information")
        {
            QueryResult r;
            for (const auto& jc: js.at("chunks"))
            {
                Chunk c { .id = jc.at("id").get<ChunkId>(), .content = std::nullopt,
                          .on_gold_chain = jc.at("gold").get<bool>() };
                if (jc.contains("fact"))
                {
                    const auto& f = jc["fact"];
                    c.content = Triple { f.at(0).get<EntityId>(), f.at(1).get<RelationId>(), f.at(2).get<EntityId>() };
                }
                r.chunks.push_back(c);
            }
            s.payload = std::move(r);
        }
        else if (kind == "answer")
            s.payload = AnswerPayload { js.at("answer").get<EntityId>() };
        else
            throw StructuralError("unknown step kind '" + kind + "'");
        if (js.contains("lp"))
            s.actor_logprob = js["lp"].get<double>();
        steps.push_back(std::move(s));
    }
    t = Trajectory(j.at("question").get<QuestionId>(), std::move(steps));
    t.validate();
}

} // namespace searchlab
