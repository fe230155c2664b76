/// The two shared-task profiles: Task A pairs binary fake and hate heads,
/// Task B pairs 4-way target and severity heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    A,
    B,
}

impl Task {
    /// Class count per head.
    pub fn head_classes(self) -> (usize, usize) {
        match self {
            Task::A => (2, 2),
            Task::B => (4, 4),
        }
    }

    /// What each head predicts, used for column defaults and report labels.
    pub fn head_names(self) -> (&'static str, &'static str) {
        match self {
            Task::A => ("fake", "hate"),
            Task::B => ("target", "severity"),
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        match s.trim() {
            "A" | "a" => Some(Task::A),
            "B" | "b" => Some(Task::B),
            _ => None,
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Task::A => write!(f, "A"),
            Task::B => write!(f, "B"),
        }
    }
}
