//! Prompt library.
//!
//! Templates taken from the published system are marked `// verbatim`; the
//! rest are reconstructions with the same intent.

use std::collections::BTreeSet;

use crate::control::{Plan, PlanError, StepTurn};

fn describe_agent(name: &str) -> &'static str {
    match name {
        "engineer" => "writes and runs Python analysis code; only printed console output is visible to others",
        "researcher" => "reasons about the problem and writes reports in markdown; cannot run code",
        "idea_maker" => "proposes and refines research ideas",
        "idea_hater" => "critiques research ideas, pointing out weaknesses and lack of novelty",
        _ => "specialised agent",
    }
}

fn agent_list(agents: &BTreeSet<String>) -> String {
    agents
        .iter()
        .map(|a| format!("- {a}: {}", describe_agent(a)))
        .collect::<Vec<_>>()
        .join("\n")
}

const PLAN_FORMAT: &str = r#"Respond with a single JSON object and nothing else:
{"steps": [{"sub_task": "...", "sub_task_agent": "...", "bullet_points": ["...", "..."]}]}"#;

pub fn planner_system(n_steps: usize, agents: &BTreeSet<String>) -> String {
    format!(
        "You are the planner. Break the task into an ordered plan of at most {n_steps} steps. \
Each step is carried out by exactly one of these agents:\n{}\n\n\
Every step needs a short sub-task description and at least one bullet point of concrete instructions.\n\n{PLAN_FORMAT}",
        agent_list(agents)
    )
}

pub fn planner_user(task: &str, instructions: &str, revision: Option<(&Plan, &str)>) -> String {
    let mut out = format!("Task:\n{task}\n\nInstructions:\n{instructions}\n");
    if let Some((plan, recommendations)) = revision {
        out.push_str(&format!(
            "\nYour previous plan:\n{}\nReviewer recommendations:\n{recommendations}\n\n\
Write the improved final plan taking the recommendations into account.\n",
            plan.render()
        ));
    }
    out
}

pub fn planner_reask(base: &str, err: &PlanError) -> String {
    format!("{base}\nYour previous answer was rejected: {err}.\nAnswer again using exactly the required JSON format.\n")
}

pub fn plan_reviewer_system(n_steps: usize, agents: &BTreeSet<String>) -> String {
    format!(
        "You are the plan reviewer. Critique the proposed plan and give concrete recommendations \
to improve it. The plan may have at most {n_steps} steps and may only use these agents:\n{}\n\
Do not write a new plan yourself; list your recommendations.",
        agent_list(agents)
    )
}

pub fn plan_reviewer_user(task: &str, instructions: &str, plan: &Plan) -> String {
    format!(
        "Task:\n{task}\n\nInstructions:\n{instructions}\n\nProposed plan:\n{}",
        plan.render()
    )
}

pub fn step_agent_system(agent: &str, instructions: &str) -> String {
    format!(
        "You are the {agent} agent ({}).\n{instructions}\n\n\
If you could not finish your sub-task, end your reply with the line `STATUS: in_progress` \
(or `STATUS: failed`).",
        describe_agent(agent)
    )
}

pub fn step_agent_user(turn: &StepTurn<'_>) -> String {
    let mut out = format!(
        "Main task:\n{}\n\nPlan:\n{}\nYou are now working on step {} of {}: {}\n",
        turn.task,
        turn.plan.render(),
        turn.index + 1,
        turn.plan.len(),
        turn.step.sub_task
    );
    for b in &turn.step.bullet_points {
        out.push_str(&format!("- {b}\n"));
    }
    if !turn.history.is_empty() {
        out.push_str("\nOutputs of previous steps:\n");
        out.push_str(&turn.render_history());
    }
    out
}

// verbatim
pub const IDEA_PLANNING: &str = "Given these datasets and information, make a plan according to the following instructions:
1. Ask idea_maker to generate 5 new research project ideas related to the datasets.
2. Ask idea_hater to critique these ideas.
3. Ask idea_maker to select and improve 2 out of the 5 research project ideas given the output of the idea_hater.
4. Ask idea_hater to critique the 2 improved ideas.
5. Ask idea_maker to select the best idea from the two.
6. Ask idea_maker to report the best idea as a scientific paper title, accompanied by a 5-sentence description.

The goal of this task is to generate a research project idea based on the data of interest.
Don't suggest performing any calculations or analyses here. The only goal of this task is to obtain the best possible project idea.";

pub const IDEA_MAKER: &str = "You generate research project ideas. Produce one idea: a title on the first line, \
then a short paragraph describing it. Use the data described in the input. Do not perform any analysis.";

pub const IDEA_HATER: &str = "You critique research project ideas. Be harsh but constructive: point out what is \
not feasible, not novel or badly motivated, and say what should change. You may recommend dropping the idea entirely.";

pub fn idea_maker_fast(input: &str, previous: Option<(&str, &str)>) -> String {
    match previous {
        None => format!("Input text:\n{input}\n\nPropose a research idea."),
        Some((idea, critique)) => format!(
            "Input text:\n{input}\n\nYour previous idea:\n{idea}\n\nCritique:\n{critique}\n\n\
Improve the idea, or replace it with a better one, taking the critique into account."
        ),
    }
}

pub fn idea_hater_fast(input: &str, idea: &str) -> String {
    format!("Input text:\n{input}\n\nIdea to critique:\n{idea}")
}

// verbatim
const FAST_METHODS: &str = "You are provided with an input text and an idea for a scientific paper. Your task is to think about the methods to use in order to carry it out. Follow these instructions:
- Generate a detailed description of the methodology that will be used to perform the research project.
- The description should clearly outline the steps, techniques, and rationale derived from the exploratory data analysis (EDA).
- The focus should be strictly on the methods and workflow for this specific project to be performed. Do not include any discussion of future directions, future work, project extensions, or limitations.
- The description should be written as if it were a senior researcher explaining to her research assistant how to perform the research necessary for this project.
- Just provide the methods, do not add a sentence at the beginning saying showing your thinking process

Problem or data description:

{input_text}

Idea:

{idea}

Respond with the methods you have generated.";

pub fn fast_methods(input: &str, idea: &str) -> String {
    FAST_METHODS
        .replace("{input_text}", input)
        .replace("{idea}", idea)
}

// verbatim
pub const METHODS_PLANNING: &str = "Given these datasets, and information on the features and project idea, we want to design a methodology to implement this idea. The goal of the task is to write a plan that will be used to generate a detailed description of the methodology that will be used to perform the research project.

- Start by requesting the researcher to provide reasoning relevant to the given project idea.
- Clarify the specific hypotheses, assumptions, or questions that should be investigated.
- This can be done in multiple steps.
- The focus should be strictly on the methods and workflow for this specific project to be performed. Do not include any discussion of future directions, future work, project extensions, or limitations.
- The description should be written as if it were a senior researcher explaining to her research assistant how to perform the research necessary for this project.

The final step of the plan must be entirely dedicated to writing the full Methodology description. The only agent involved in this workflow is the researcher. In this task, we do not perform any calculations or analyses, only outline the methodology.";

// verbatim
pub const METHODS_RESEARCHER: &str = "Given this information, we want to design a methodology to implement this idea.
The goal of the task is to develop a detailed methodology that will be used to carry out the research project.

- You should focus on the methods for this specific project to be performed. Do not include any discussion of future directions, future work, project extensions, or limitations.
- The methodology description should be written as if it were a senior researcher explaining to her research assistant how to perform the project.

The designed methodology should focus on describing the research and analysis that will be performed. The full methodology description should be written in markdown format and include all the details of the designed methodology.
It should be roughly 500 words long.";

// verbatim
pub fn analysis_planning(idea: &str, methods: &str, agents: &str) -> String {
    format!(
        "{idea}

{methods}

Given these datasets, project idea and methodology, we want to perform the project analysis and generate the results, plots and insights.

The goal is to perform the in-depth research and analysis.

The plan must strictly involve only the following agents: {agents}.

The goal here is to do the in-depth research and analysis, not an exploratory data analysis.

The final step of the plan, carried out by the researcher agent, must be entirely dedicated to writing the full Results section of the paper or report. If this research project involves code implementation, this final step should report on all the qualitative and quantitative results, interpretations of the plots and key statistics, and references to the plots generated in the previous steps.
The final result report will be what will be passed on to the paper writer agents, so all relevant information must be included in the final report (everything else will be discarded)."
    )
}

// verbatim
pub fn analysis_engineer(idea: &str, methods: &str) -> String {
    format!(
        "{idea}

{methods}

Given these datasets, and information on the features and project idea and methodology, we want to perform the project analysis and generate the results, plots and key statistics.
The goal is to perform in-depth research and analysis. This means that you must generate the results, plots, and key statistics.

Warnings for computing and plotting:
- make sure dynamical ranges are well captured (carefully adjust the limits, binning, and log or linear axes scales, for each feature).

For histograms (if needed):
-Use log-scale for features with values spanning several orders of magnitude.

GENERAL IMPORTANT INSTRUCTIONS: You must print out in the console ALL the quantitative information that you think the researcher will need to interpret the results. (The researcher does not have access to saved data files, only to what you print out!)
Remember that the researcher agent can not load information from files, so you must print ALL necessary info in the console (without truncation). For this, it may be necessary to change Pandas (if using it) display options.

Write a single self-contained Python script in one ```python fenced block. Save plots to the current directory."
    )
}

// verbatim
pub fn analysis_researcher(idea: &str, methods: &str) -> String {
    format!(
        "{idea}

{methods}

At the end of the session, your task is to generate a detailed/extensive discussion and interpretation of the results.
If quantitative results were derived you should provide interpretations of the plots and interpretations of the key statistics, including reporting meaningful quantitative results, tables and references to material previously generated in the session.
The results should be reported in full (not a summary) and in academic style. The results report/section should be around 2000 words.

The final result report will be what will be passed on to the paper writer agents, so all relevant information must be included in the final report (everything else will be discarded)."
    )
}

pub const DEBUGGER: &str = "The Python script below failed. Reply with the complete corrected script in a single \
```python fenced block, nothing else.";

pub fn debug_request(code: &str, stdout: &str, stderr: &str) -> String {
    format!("Script:\n```python\n{code}\n```\n\nstdout:\n{stdout}\n\nstderr:\n{stderr}")
}

pub const NOVELTY: &str = "You decide whether a research idea is new. You see the idea, the description of the \
data it uses, and the papers found so far. Applying a standard technique to a new dataset can count as new.\n\
Answer with exactly one of these on the first line:\n\
DECISION: NEW\nDECISION: NOT NEW\nQUERY: <search query for a scholarly search engine>\n\
Use QUERY when you do not have enough information yet. Add a short justification after the first line.";

pub fn novelty_user(input: &str, idea: &str, papers: &str, queries: &[String]) -> String {
    let q = if queries.is_empty() {
        "(none)".to_string()
    } else {
        queries.join("\n")
    };
    format!(
        "Data description:\n{input}\n\nIdea:\n{idea}\n\nQueries issued so far:\n{q}\n\nPapers found so far:\n{papers}"
    )
}

pub const NOVELTY_REASK: &str = "Your answer did not follow the required format. The first line must be \
`DECISION: NEW`, `DECISION: NOT NEW` or `QUERY: <query>`.";

pub const LITERATURE_SUMMARY: &str = "You write a literature report in markdown. State whether the idea is new \
or not and explain why, then list the most relevant papers found (title and URL) with one sentence each on how they relate.";

pub fn literature_summary_user(idea: &str, verdict: &str, papers: &str, log: &str) -> String {
    format!("Idea:\n{idea}\n\nVerdict: {verdict}\n\nSearch log:\n{log}\n\nPapers found:\n{papers}")
}

pub const SUMMARIZER: &str = "Summarize the following paper for a researcher who wants to build on it: \
main question, data, methods, and key results. Use markdown, at most 400 words.";

pub fn keyword_select(text: &str, level: &str, candidates: &[String], limit: &str) -> String {
    format!(
        "Text:\n{text}\n\nSelect {limit} {level} from the list below that best characterize the text. \
Copy each choice exactly as written, one per line, with no numbering or commentary.\n\n{}",
        candidates.join("\n")
    )
}

pub const KEYWORD_SYSTEM: &str = "You pick keywords from a controlled vocabulary. Never invent terms.";

pub fn keyword_reask(bad: &[String]) -> String {
    format!(
        "These terms are not in the list: {}. Choose again, using only terms copied verbatim from the list.",
        bad.join("; ")
    )
}

pub const PAPER_WRITER: &str = "You are an expert scientific writer. Write in LaTeX (no preamble, no \\begin{document}). \
Escape special characters (%, &, _, #) properly. Do not invent results that are not in the provided material.";

pub fn paper_context(input: &str, idea: &str, methods: &str, results: &str, keywords: &[String]) -> String {
    let mut out = format!(
        "Data description:\n{input}\n\nIdea:\n{idea}\n\nMethods:\n{methods}\n\nResults:\n{results}\n"
    );
    if !keywords.is_empty() {
        out.push_str(&format!("\nKeywords: {}\n", keywords.join(", ")));
    }
    out
}

pub fn title_abstract(context: &str) -> String {
    format!(
        "{context}\nWrite a title and an abstract for the paper. Respond in exactly this format:\n\
\\begin{{Title}}\n<title>\n\\end{{Title}}\n\\begin{{Abstract}}\n<abstract>\n\\end{{Abstract}}"
    )
}

pub fn section(context: &str, title: &str, abstract_: &str, previous: &[(String, String)], name: &str) -> String {
    let mut out = format!("{context}\nTitle: {title}\n\nAbstract:\n{abstract_}\n");
    for (n, body) in previous {
        out.push_str(&format!("\nSection {n} (already written):\n{body}\n"));
    }
    out.push_str(&format!(
        "\nWrite the {name} section of the paper, consistent with the sections above. \
Respond with the section body only, without the \\section command."
    ));
    out
}

pub fn reflection(name: &str, draft: &str) -> String {
    format!(
        "Here is a draft of the {name} section:\n{draft}\n\nReflect on its weaknesses (clarity, accuracy with respect \
to the material, LaTeX errors) and respond with the improved section body only."
    )
}

pub fn caption(context: &str, file: &str) -> String {
    format!(
        "{context}\nThe attached image is the plot `{file}` produced during the analysis. Write a figure caption for it \
(2-4 sentences, LaTeX-safe). Respond with the caption text only."
    )
}

pub fn insert_figures(results: &str, figures: &str) -> String {
    format!(
        "Results section:\n{results}\n\nInsert each of the following figures into the Results section at the most \
appropriate place, using a figure environment with the given \\includegraphics path, caption and label. \
Every figure must be inserted exactly once. Respond with the full updated section only.\n\n{figures}"
    )
}

pub fn missing_figures(labels: &[String]) -> String {
    format!(
        "These figures are missing from your answer: {}. Insert them too and respond with the full section again.",
        labels.join(", ")
    )
}

pub fn polish_results(results: &str) -> String {
    format!(
        "Rewrite and polish this Results section so that the text describes and refers to each figure via \\ref. \
Keep every figure environment unchanged. Respond with the section body only.\n\n{results}"
    )
}

pub fn final_polish(name: &str, body: &str) -> String {
    format!(
        "Make a final pass through the {name} section: improve clarity and fix LaTeX errors. Keep every figure \
environment and every \\cite command unchanged. Respond with the section body only.\n\n{body}"
    )
}

pub const LATEX_FIXER: &str = "You fix LaTeX compilation errors. Respond with the complete corrected document in \
a single ```latex fenced block.";

pub fn latex_fix(source: &str, log: &str) -> String {
    format!("Compilation log (tail):\n{log}\n\nDocument:\n```latex\n{source}\n```")
}

// verbatim
pub const REVIEWER: &str = "You are a scientific referee. Below, you can find a scientific paper written in latex. Your task is to read and understand the paper. Next write a detailed report about the good/interesting aspects of the paper but also bad things, failures...etc. For the bad things, please provide comments on what would be needed to do in order to improve it. Note that you may be reviewing an AI-generated paper, so the author may not be human, and keywords may be missing. No need to mention those.

- Find all flaws in the paper
- Find things that may not be done correctly
- Identify places where further revisions would make the paper better
- Check carefully that there is enough evidence in the paper to support the conclusions
- If the results are not good, reason whether this is a surprising thing or just it used the wrong strategy and failed. If the latter, the paper should be considered bad.

Try to judge whether the paper will be worth a publication or not. Give a score from 0 (a very bad paper) to 9 (an amazing paper). For bad papers, give a low score.

**Respond in exactly this format**:
\\begin{REVIEW}
<REVIEW>
\\end{REVIEW}
In <REVIEW>, put your report.";

pub const REVIEW_REASK: &str = "Your answer did not contain the required \\begin{REVIEW} ... \\end{REVIEW} block. \
Respond again in exactly that format.";

pub fn review_continuation(part: usize, parts: usize) -> String {
    format!("Pages, part {part} of {parts}. Keep reading; the full paper follows across several messages.")
}
