"""Default role prompts and templates for generated workloads."""

EXPERT_PROMPT = "You are a domain expert. Answer the question precisely.\n"

CRITIC_PROMPT = "You are a critic. Check the reasoning of your peers.\n"

MATHEMATICIAN_PROMPT = "You are a mathematician. Verify every calculation.\n"

REFEREE_PROMPT = "You are the final referee. Combine the answers into one.\n"

ROLE_PROMPTS: tuple[str, ...] = (
    EXPERT_PROMPT,
    CRITIC_PROMPT,
    MATHEMATICIAN_PROMPT,
    REFEREE_PROMPT,
)

QUESTION_TEMPLATE = "Question: {user_question}\n"

PEER_TEMPLATE = "Agent {agent_id} said: {{agent_{agent_id}_current}}\n"

ANSWER_SUFFIX = "Answer:"


def role_prompt(index: int) -> str:
    """Role prompt for the ``index``-th agent, cycling through the roles."""
    return ROLE_PROMPTS[index % len(ROLE_PROMPTS)]


def format_agent_template(index: int, upstream: list[str]) -> str:
    """Template for an agent that reads the question and its upstream peers.

    Args:
        index: Position of the agent, selects the role prompt.
        upstream: Upstream agent ids, in prompt order.

    Returns:
        Template text using the placeholder grammar.
    """
    peers = "".join(PEER_TEMPLATE.format(agent_id=agent_id) for agent_id in upstream)
    return role_prompt(index) + QUESTION_TEMPLATE + peers + ANSWER_SUFFIX
