//! The built-in five-phase policy cycle and its general tasks.

use alloc::vec;

use super::schema::canonical_schema;
use super::{MetaMetaModel, PhaseMetaModel, PhaseOrderConstraint, TaskDef};
use crate::ids::VersionId;

pub const DEFAULT_VERSION: &str = "1.0.0";

fn phase(id: &str, name: &str, ordinal: i64, tasks: alloc::vec::Vec<TaskDef>) -> PhaseMetaModel {
    PhaseMetaModel { id: id.into(), name: name.into(), ordinal, tasks, entry_decision_required: true }
}

/// Agenda setting, analysis, policy creation, implementation, and monitoring
/// & evaluation. Only two orderings are built in: validation and plan setting
/// follow problem identification, and implementation requires a completed
/// agenda-setting iteration. Solution determination follows challenge
/// identification so that analysis has a single entry task.
pub fn default_policy_cycle() -> MetaMetaModel {
    let agenda = phase(
        "agenda_setting",
        "Agenda Setting",
        1,
        vec![
            TaskDef::new("problem_identification", "Problem Identification")
                .with_subtasks([
                    "acquisition of qualitative and/or quantitative data",
                    "review of collected data/reported issue",
                ])
                .consultable(true),
            TaskDef::new("validation", "Validation")
                .with_subtasks([
                    "evidence gathering for objective or subjective validation",
                    "analysis of gathered evidence",
                ])
                .after(["problem_identification"])
                .consultable(true),
            TaskDef::new("plan_setting", "Plan setting")
                .with_subtasks([
                    "Identify action to be taken (change of existing policy or devise new policy)",
                    "devise strategy",
                ])
                .after(["problem_identification"]),
        ],
    );
    let analysis = phase(
        "analysis",
        "Analysis",
        2,
        vec![
            TaskDef::new("challenges_opportunities_identification", "Challenges and opportunities identification")
                .with_subtasks([
                    "specification of goals",
                    "data collection from diverse sources",
                    "collection of opinions from stakeholders",
                    "analysis of collected data",
                ])
                .consultable(true),
            TaskDef::new("solution_determination", "Determination of solution approaches and strategies")
                .with_subtasks(["develop a range of options", "analysis of options"])
                .after(["challenges_opportunities_identification"]),
        ],
    );
    let creation = phase(
        "policy_creation",
        "Policy Creation",
        3,
        vec![
            TaskDef::new("formal_consultation", "Formal Consultation")
                .with_subtasks([
                    "collection of residents' opinions",
                    "stakeholders' engagement",
                    "assessment of opinions",
                ])
                .consultable(true),
            TaskDef::new("final_decision_approval", "Final Decision and approval")
                .with_subtasks(["weighing of policy options in the political context", "decision based on step 'a'"]),
            TaskDef::new("policy_formulation", "Policy Formulation")
                .with_subtasks(["draft policy based on policy options"]),
            TaskDef::new("impl_monitoring_plan_design", "Design implementation and monitoring plan")
                .with_subtasks(["Actions to be taken for implementation and monitoring"]),
        ],
    );
    let implementation = phase(
        "implementation",
        "Policy Implementation",
        4,
        vec![
            TaskDef::new("interagency_collaboration", "Interagency collaboration")
                .with_subtasks(["collection of data", "selection of relevant implementation body"])
                .consultable(true),
            TaskDef::new("regulation_development", "development of regulation/legislation"),
            TaskDef::new("monitoring_data_collection", "Collection of data (monitoring data)")
                .with_subtasks(["identify key indicators of monitoring"])
                .consultable(true),
        ],
    );
    let monitoring = phase(
        "monitoring_evaluation",
        "Policy Monitoring and Evaluation",
        5,
        vec![
            TaskDef::new("monitoring", "Monitoring")
                .with_subtasks([
                    "collect evidence",
                    "analyse data collected as per specified indicators",
                    "collect views/feedback of users including citizens",
                    "analyse collected views",
                ])
                .consultable(true),
            TaskDef::new("evaluation", "Evaluation")
                .with_subtasks(["Administrative and judicial evaluation", "Impact evaluation"])
                .consultable(true),
            TaskDef::new("loop_back", "Loop back to stage one"),
        ],
    );
    MetaMetaModel {
        version: VersionId::new(DEFAULT_VERSION),
        phases: vec![agenda, analysis, creation, implementation, monitoring],
        phase_constraints: vec![PhaseOrderConstraint {
            subject: "implementation".into(),
            requires: "agenda_setting".into(),
        }],
        schema: canonical_schema(),
    }
}
