from macrorealapp.management.base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Score the mixture, evolution and sufficient conditions for a state."
    experiment = "cond_check"
