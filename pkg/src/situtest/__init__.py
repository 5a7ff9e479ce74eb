"""Collider-aware situation testing of black-box binary classifiers.

Given a classifier, a causal DAG encoding the regulatory policy, and
the training-data distribution of the outcome's descendant variables,
this package scores every audited individual two ways: the naive
flip-the-protected-attribute probe and the collider-adjusted probe that
marginalizes the descendants away, then flags individuals whose
adjusted score exceeds a regulatory threshold.
"""

from .causal_graph import (
    AuditRoles,
    AuditValidation,
    Dag,
    GraphError,
    NodePartition,
    parse_dag,
    parse_dag_json,
    partition_nodes,
    validate_for_audit,
)
from .classifiers import (
    ExternalModel,
    ExternalModelError,
    KnnModel,
    LogisticModel,
    LookupModel,
    NaiveBayesModel,
    PredictionError,
    TrainingError,
    external_predict,
    flip_protected,
    train,
)
from .dataset import (
    AttributeSpec,
    Binning,
    DataError,
    Dataset,
    EmpiricalJointDistribution,
    Record,
    Schema,
    fit_distribution,
    load_csv,
    load_distribution,
)
from .evaluation import ComparisonReport, EvaluationError, EvaluationResult, compare, rmse
from .scm import (
    DiscreteScm,
    ScmError,
    SyntheticConfig,
    exact_distribution,
    exact_joint_distribution,
    generate_synthetic,
    oracle_direct_effect,
    scm_intervene_sample,
    scm_sample,
    synthetic_dag,
    true_discrimination_score,
)
from .situation_test import (
    AuditConfig,
    AuditError,
    DiscriminationReport,
    ScoredIndividual,
    audit,
    marginalized_proba,
    naive_score,
    unbiased_score,
)

__version__ = "0.1.0"
