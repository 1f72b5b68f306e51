#include <stdio.h>
#include "aggrevated.h"
int main(void){
  AgvConfig *c=NULL; AgvRun *r=NULL; double g=0;
  if(agv_config_parse("env.kind = tree\nenv.depth = 3\nlearner.rule = eg\nlearner.episodes = 10\n",&c)!=AGV_STATUS_OK){puts(agv_last_error_message());return 1;}
  if(agv_run(c,&r)!=AGV_STATUS_OK) return 1;
  agv_run_final_regret(r,&g); printf("version %s regret %g\n",agv_version(),g);
  agv_run_free(r); agv_config_free(c); return 0;}
